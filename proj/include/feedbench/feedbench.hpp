#pragma once

// Everything except the HTTP transport (see http_transport.hpp).

#include "feedbench/action_model.hpp"
#include "feedbench/errors.hpp"
#include "feedbench/evaluation.hpp"
#include "feedbench/experiment_runner.hpp"
#include "feedbench/llm_gateway.hpp"
#include "feedbench/memory_systems.hpp"
#include "feedbench/random.hpp"
#include "feedbench/session.hpp"
#include "feedbench/task_provider.hpp"
#include "feedbench/text.hpp"
#include "feedbench/user_simulator.hpp"
