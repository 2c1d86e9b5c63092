#pragma once

// Umbrella header for the whole library.

#include "ptgf/agg_data.hpp"
#include "ptgf/bootstrap.hpp"
#include "ptgf/dgp_sim.hpp"
#include "ptgf/error.hpp"
#include "ptgf/estimators.hpp"
#include "ptgf/glm.hpp"
#include "ptgf/io.hpp"
#include "ptgf/oracle.hpp"
#include "ptgf/panel.hpp"
#include "ptgf/parallel.hpp"
#include "ptgf/rng.hpp"
#include "ptgf/sensitivity.hpp"
#include "ptgf/spline.hpp"
#include "ptgf/stats.hpp"
#include "ptgf/table1.hpp"
