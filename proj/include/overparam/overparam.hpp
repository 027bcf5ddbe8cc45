#pragma once

#include "overparam/anova.hpp"
#include "overparam/ddsim.hpp"
#include "overparam/diagnostics.hpp"
#include "overparam/errors.hpp"
#include "overparam/estimators.hpp"
#include "overparam/io.hpp"
#include "overparam/spectral_core.hpp"
