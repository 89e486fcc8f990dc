// Copyright (C) 2026 The dbs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dbs/beam.hpp"
#include "dbs/bridge.hpp"
#include "dbs/embeddings.hpp"
#include "dbs/error.hpp"
#include "dbs/eval.hpp"
#include "dbs/lm.hpp"
#include "dbs/ngram.hpp"
#include "dbs/random.hpp"
#include "dbs/sampling.hpp"
#include "dbs/scoring.hpp"
#include "dbs/stem.hpp"
