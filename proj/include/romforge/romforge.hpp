#pragma once

#include "romforge/error.hpp"
#include "romforge/binary_io.hpp"
#include "romforge/data_model.hpp"
#include "romforge/snapshot_io.hpp"
#include "romforge/pod.hpp"
#include "romforge/gpr.hpp"
#include "romforge/rom.hpp"
#include "romforge/gca.hpp"
#include "romforge/metrics.hpp"
#include "romforge/plot.hpp"
