#pragma once

#include "hodgeflow/agents.hpp"
#include "hodgeflow/cochain.hpp"
#include "hodgeflow/common.hpp"
#include "hodgeflow/diagnostics.hpp"
#include "hodgeflow/envs.hpp"
#include "hodgeflow/harness.hpp"
#include "hodgeflow/hodge.hpp"
#include "hodgeflow/io.hpp"
#include "hodgeflow/mdp.hpp"
