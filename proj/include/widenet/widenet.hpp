#pragma once

#include "widenet/core/layers.hpp"
#include "widenet/core/ops.hpp"
#include "widenet/core/optim.hpp"
#include "widenet/core/parameter.hpp"
#include "widenet/core/tape.hpp"
#include "widenet/core/tensor.hpp"

#include "widenet/agents.hpp"
#include "widenet/architectures.hpp"
#include "widenet/checkpoint.hpp"
#include "widenet/config.hpp"
#include "widenet/diagnostics.hpp"
#include "widenet/distributed.hpp"
#include "widenet/envs.hpp"
#include "widenet/experiment.hpp"
#include "widenet/ofenet.hpp"
#include "widenet/replay.hpp"
