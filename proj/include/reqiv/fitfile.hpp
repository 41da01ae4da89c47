#pragma once

#include <iosfwd>
#include <string>

#include "reqiv/selectmod.hpp"

namespace reqiv {

// JSON form of a SelectionFit with every field, its ModelSpec included, so
// later steps can rebuild the design from the same panel. Non-finite numbers
// are written as null.
void write_fit(std::ostream& out, const SelectionFit& fit);
void write_fit_file(const std::string& path, const SelectionFit& fit);
SelectionFit read_fit(std::istream& in, const std::string& source);
SelectionFit read_fit_file(const std::string& path);

// Parameter table: name, estimate, se, z, p_value.
void write_parameter_table(std::ostream& out, const SelectionFit& fit);

}  // namespace reqiv
