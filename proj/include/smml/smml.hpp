#pragma once

#include "smml/core.hpp"
#include "smml/model.hpp"
#include "smml/marginal.hpp"
#include "smml/codebook.hpp"
#include "smml/projection.hpp"
#include "smml/geometry.hpp"
#include "smml/stats.hpp"
#include "smml/partition_opt.hpp"
#include "smml/asymptotics.hpp"
#include "smml/config.hpp"
#include "smml/io.hpp"
