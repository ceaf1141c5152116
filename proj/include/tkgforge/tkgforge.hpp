#pragma once

// Umbrella header.
#include "tkgforge/kg_store.hpp"
#include "tkgforge/query_history.hpp"
#include "tkgforge/anonymizer.hpp"
#include "tkgforge/sample_forge.hpp"
#include "tkgforge/scorers.hpp"
#include "tkgforge/completion_client.hpp"
#include "tkgforge/evaluator.hpp"
#include "tkgforge/pipeline.hpp"
#include "tkgforge/mock_endpoint.hpp"
#include "tkgforge/commands.hpp"
