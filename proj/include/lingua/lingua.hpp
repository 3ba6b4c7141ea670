#pragma once

#include "lingua/activation.hpp"
#include "lingua/error.hpp"
#include "lingua/io.hpp"
#include "lingua/masks.hpp"
#include "lingua/metrics.hpp"
#include "lingua/parallel.hpp"
#include "lingua/probing.hpp"
#include "lingua/synth.hpp"
#include "lingua/trace.hpp"
