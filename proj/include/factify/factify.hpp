#pragma once

// Umbrella header.

#include "factify/config.hpp"
#include "factify/csv.hpp"
#include "factify/datamodel.hpp"
#include "factify/dataio.hpp"
#include "factify/embedding.hpp"
#include "factify/embedding_cache.hpp"
#include "factify/encoders.hpp"
#include "factify/entailment_head.hpp"
#include "factify/error.hpp"
#include "factify/forest.hpp"
#include "factify/fusion.hpp"
#include "factify/hashing.hpp"
#include "factify/lexical.hpp"
#include "factify/metrics.hpp"
#include "factify/mlp.hpp"
#include "factify/pipeline.hpp"
#include "factify/rng.hpp"
#include "factify/synth.hpp"
#include "factify/text.hpp"
