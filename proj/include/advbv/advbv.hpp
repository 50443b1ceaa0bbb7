#pragma once

#include "advbv/errors.hpp"
#include "advbv/numerics.hpp"
#include "advbv/datasets.hpp"
#include "advbv/attacks.hpp"
#include "advbv/models.hpp"
#include "advbv/training.hpp"
#include "advbv/parallel.hpp"
#include "advbv/estimators.hpp"
#include "advbv/config.hpp"
#include "advbv/harness.hpp"
#include "advbv/analysis.hpp"
#include "advbv/selftest.hpp"
