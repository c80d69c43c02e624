#pragma once

#include "splare/analysis.hpp"
#include "splare/error.hpp"
#include "splare/eval.hpp"
#include "splare/index.hpp"
#include "splare/index_io.hpp"
#include "splare/jsonl.hpp"
#include "splare/matrix.hpp"
#include "splare/sae.hpp"
#include "splare/sae_io.hpp"
#include "splare/sparse_vector.hpp"
#include "splare/synth.hpp"
#include "splare/training.hpp"
#include "splare/training_io.hpp"
