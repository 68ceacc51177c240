// Copyright 2026 The sg2m Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "sg2m/autograd.hpp"
#include "sg2m/checkpoint.hpp"
#include "sg2m/config.hpp"
#include "sg2m/dataset.hpp"
#include "sg2m/errors.hpp"
#include "sg2m/gradcheck.hpp"
#include "sg2m/io.hpp"
#include "sg2m/metrics.hpp"
#include "sg2m/modconv.hpp"
#include "sg2m/networks.hpp"
#include "sg2m/ops.hpp"
#include "sg2m/parallel.hpp"
#include "sg2m/params.hpp"
#include "sg2m/projection.hpp"
#include "sg2m/rng.hpp"
#include "sg2m/run.hpp"
#include "sg2m/tensor.hpp"
#include "sg2m/training.hpp"
