#pragma once

#include "crtperm/analysis.hpp"
#include "crtperm/confidence.hpp"
#include "crtperm/config.hpp"
#include "crtperm/core_data.hpp"
#include "crtperm/corrections.hpp"
#include "crtperm/error.hpp"
#include "crtperm/glm.hpp"
#include "crtperm/parallel.hpp"
#include "crtperm/permutation.hpp"
#include "crtperm/rng.hpp"
#include "crtperm/simulation.hpp"
#include "crtperm/statistics.hpp"
