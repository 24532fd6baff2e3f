#pragma once

#include "qbench/awq.hpp"
#include "qbench/errors.hpp"
#include "qbench/half.hpp"
#include "qbench/harness/bench.hpp"
#include "qbench/harness/dataset_io.hpp"
#include "qbench/harness/model_io.hpp"
#include "qbench/harness/report.hpp"
#include "qbench/harness/pipeline.hpp"
#include "qbench/int4.hpp"
#include "qbench/metrics.hpp"
#include "qbench/nn/graph.hpp"
#include "qbench/nn/kernels.hpp"
#include "qbench/nn/quantized_model.hpp"
#include "qbench/quant.hpp"
#include "qbench/reftrain/augment.hpp"
#include "qbench/reftrain/dataset.hpp"
#include "qbench/reftrain/kfold.hpp"
#include "qbench/reftrain/network.hpp"
#include "qbench/reftrain/train.hpp"
#include "qbench/rng.hpp"
#include "qbench/tensor.hpp"
