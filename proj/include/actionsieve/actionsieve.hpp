#pragma once

#include "actionsieve/types.hpp"
#include "actionsieve/record_io.hpp"
#include "actionsieve/motion.hpp"
#include "actionsieve/filters.hpp"
#include "actionsieve/pipeline.hpp"
#include "actionsieve/metrics.hpp"
