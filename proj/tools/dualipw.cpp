#include "dualipw/cli/app.hpp"

int main(int argc, char** argv) { return dualipw::cli::run(argc, argv); }
