#pragma once

#include "ubert/tensor.hpp"
#include "ubert/ops.hpp"
#include "ubert/grad_check.hpp"
#include "ubert/chunking.hpp"
#include "ubert/model.hpp"
#include "ubert/encoder.hpp"
#include "ubert/recurrence.hpp"
#include "ubert/pipeline.hpp"
#include "ubert/training.hpp"
#include "ubert/checkpoint.hpp"
#include "ubert/corpus.hpp"
#include "ubert/evaluation/metrics.hpp"
#include "ubert/evaluation/significance.hpp"
#include "ubert/evaluation/bootstrap.hpp"
#include "ubert/evaluation/records.hpp"
#include "ubert/evaluation/ranking.hpp"
#include "ubert/evaluation/report.hpp"
