#pragma once

// Heterogeneity detection across distributed data blocks: per-block
// M-estimation with sandwich variances, the re-normalized Wald test, the
// extreme contrast test, their combination, closed-form power diagnostics,
// and a reproducible Monte Carlo lab.

#include "hetdet/errors.hpp"
#include "hetdet/glm.hpp"
#include "hetdet/inference.hpp"
#include "hetdet/normal.hpp"
#include "hetdet/power_analysis.hpp"
#include "hetdet/rng.hpp"
#include "hetdet/simlab.hpp"
