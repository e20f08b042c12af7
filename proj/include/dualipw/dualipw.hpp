#pragma once

#include "dualipw/numkit/autodiff.hpp"
#include "dualipw/numkit/checkpoint.hpp"
#include "dualipw/numkit/graph.hpp"
#include "dualipw/numkit/lstm.hpp"
#include "dualipw/numkit/optim.hpp"
#include "dualipw/numkit/rng.hpp"
#include "dualipw/numkit/tensor.hpp"

#include "dualipw/dataset/batching.hpp"
#include "dualipw/dataset/io.hpp"
#include "dualipw/dataset/session.hpp"
#include "dualipw/dataset/synthetic.hpp"

#include "dualipw/propensity/dmp.hpp"
#include "dualipw/propensity/position_model.hpp"
#include "dualipw/propensity/query_model.hpp"

#include "dualipw/training/gradcheck.hpp"
#include "dualipw/training/losses.hpp"
#include "dualipw/training/ranking_model.hpp"
#include "dualipw/training/trainer.hpp"

#include "dualipw/evalkit/analysis.hpp"
#include "dualipw/evalkit/evaluate.hpp"
#include "dualipw/evalkit/metrics.hpp"
#include "dualipw/evalkit/unbiasedness.hpp"
