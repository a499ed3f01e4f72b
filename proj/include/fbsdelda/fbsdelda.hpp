#pragma once

#include "fbsdelda/absdel.hpp"
#include "fbsdelda/coupled.hpp"
#include "fbsdelda/dsl.hpp"
#include "fbsdelda/errors.hpp"
#include "fbsdelda/experiment.hpp"
#include "fbsdelda/grid_process.hpp"
#include "fbsdelda/levy_model.hpp"
#include "fbsdelda/lq.hpp"
#include "fbsdelda/monotonicity.hpp"
#include "fbsdelda/noise.hpp"
#include "fbsdelda/regression.hpp"
#include "fbsdelda/riccati.hpp"
#include "fbsdelda/rng.hpp"
#include "fbsdelda/sdedl.hpp"
#include "fbsdelda/time_grid.hpp"
#include "fbsdelda/verify.hpp"
#include "fbsdelda/version.hpp"
