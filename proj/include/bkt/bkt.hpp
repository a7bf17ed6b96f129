#pragma once

#include "bkt/baseline.hpp"
#include "bkt/core/error.hpp"
#include "bkt/core/gaussian.hpp"
#include "bkt/core/random.hpp"
#include "bkt/core/types.hpp"
#include "bkt/eval.hpp"
#include "bkt/inference/bic.hpp"
#include "bkt/inference/diagnostics.hpp"
#include "bkt/inference/hmc.hpp"
#include "bkt/inference/posterior.hpp"
#include "bkt/inference/run_chain.hpp"
#include "bkt/inference/step_chain.hpp"
#include "bkt/model_core.hpp"
#include "bkt/scenarios.hpp"
