#pragma once

#include "ldt/checks.hpp"
#include "ldt/error.hpp"
#include "ldt/eval.hpp"
#include "ldt/inference.hpp"
#include "ldt/instance.hpp"
#include "ldt/lattice.hpp"
#include "ldt/loss.hpp"
#include "ldt/maze.hpp"
#include "ldt/model/checkpoint.hpp"
#include "ldt/model/config.hpp"
#include "ldt/model/transformer.hpp"
#include "ldt/rng.hpp"
#include "ldt/step.hpp"
#include "ldt/sudoku.hpp"
#include "ldt/symmetry.hpp"
#include "ldt/training.hpp"
