#pragma once

#include "rerm/error.hpp"
#include "rerm/rng.hpp"
#include "rerm/data.hpp"
#include "rerm/loss.hpp"
#include "rerm/model.hpp"
#include "rerm/objective.hpp"
#include "rerm/optim.hpp"
#include "rerm/oracles.hpp"
#include "rerm/bounds.hpp"
#include "rerm/harness.hpp"
#include "rerm/diagnostics.hpp"
