#pragma once

#include "sgte/config.hpp"
#include "sgte/core.hpp"
#include "sgte/csv.hpp"
#include "sgte/error.hpp"
#include "sgte/estimators.hpp"
#include "sgte/inference.hpp"
#include "sgte/nuisance/design.hpp"
#include "sgte/nuisance/logistic.hpp"
#include "sgte/nuisance/nuisance.hpp"
#include "sgte/nuisance/spline.hpp"
#include "sgte/parallel.hpp"
#include "sgte/rng.hpp"
#include "sgte/sim/calibrate.hpp"
#include "sgte/sim/dgp_main.hpp"
#include "sgte/sim/dgp_rate.hpp"
#include "sgte/sim/experiment.hpp"
#include "sgte/version.hpp"
