#pragma once

#include <iosfwd>
#include <map>
#include <string>

#include "mmali/mlp.hpp"
#include "mmali/tensor.hpp"

namespace mmali {

/// Versioned binary parameter file: magic, entry count, then per entry
/// name, shape and raw little-endian f64 data. Round-trips bit-exactly.
void save_checkpoint(const std::map<std::string, Tensor>& entries, std::ostream& out);
std::map<std::string, Tensor> load_checkpoint(std::istream& in);

void save_checkpoint(const std::map<std::string, Tensor>& entries, const std::string& path);
std::map<std::string, Tensor> load_checkpoint(const std::string& path);

/// Store <-> flat map helpers. Names are prefixed "prefix/param".
void collect_params(const ParamStore& params, const std::string& prefix,
                    std::map<std::string, Tensor>& into);
void restore_params(ParamStore& params, const std::string& prefix,
                    const std::map<std::string, Tensor>& from);

/// Byte image of a store, bit-exact; handy for equality checks.
std::string serialize_params(const ParamStore& params);

} // namespace mmali
