#pragma once

#include "pbmr/checkpoint.hpp"
#include "pbmr/error.hpp"
#include "pbmr/folds.hpp"
#include "pbmr/imageize.hpp"
#include "pbmr/ingest.hpp"
#include "pbmr/metrics.hpp"
#include "pbmr/model.hpp"
#include "pbmr/ops.hpp"
#include "pbmr/optim.hpp"
#include "pbmr/report.hpp"
#include "pbmr/rng.hpp"
#include "pbmr/synth.hpp"
#include "pbmr/tensor.hpp"
#include "pbmr/trainer.hpp"
