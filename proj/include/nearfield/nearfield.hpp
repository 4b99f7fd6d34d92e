#pragma once

#include "nearfield/errors.hpp"
#include "nearfield/model.hpp"
#include "nearfield/wires.hpp"
#include "nearfield/field_grid.hpp"
#include "nearfield/hyperfine.hpp"
#include "nearfield/shiftmap.hpp"
#include "nearfield/inverse_fit.hpp"
#include "nearfield/io_json.hpp"
#include "nearfield/pgm.hpp"
