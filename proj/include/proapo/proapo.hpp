#pragma once

// Umbrella header.

#include "proapo/candidate.hpp"
#include "proapo/driver.hpp"
#include "proapo/embedding_store.hpp"
#include "proapo/error.hpp"
#include "proapo/prompt_library.hpp"
#include "proapo/report.hpp"
#include "proapo/sampling.hpp"
#include "proapo/scoring.hpp"
#include "proapo/search.hpp"
#include "proapo/synth.hpp"
