// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <maccal/numkernel.hpp>
#include <maccal/datasets.hpp>
#include <maccal/losses.hpp>
#include <maccal/metrics.hpp>
#include <maccal/posthoc.hpp>
#include <maccal/model.hpp>
#include <maccal/training.hpp>
#include <maccal/io.hpp>
