#pragma once

#include "mhn/anchors.hpp"
#include "mhn/archgraph.hpp"
#include "mhn/box.hpp"
#include "mhn/builders.hpp"
#include "mhn/detect.hpp"
#include "mhn/engine.hpp"
#include "mhn/error.hpp"
#include "mhn/eval.hpp"
#include "mhn/io.hpp"
#include "mhn/tensor.hpp"
