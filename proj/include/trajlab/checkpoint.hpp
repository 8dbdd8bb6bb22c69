#pragma once

#include <map>
#include <string>
#include <vector>

namespace trajlab::io {

/// Versioned binary container of named f64 arrays plus a free-form JSON
/// metadata string. Layout (little-endian):
///   magic "TLCP" | u32 version | u32 meta_len | meta bytes | u32 n_arrays
///   per array: u32 name_len | name | u32 rows | u32 cols | f64 data
struct Checkpoint {
    struct Array {
        int rows = 0;
        int cols = 0;
        std::vector<double> values;
    };
    std::map<std::string, Array> arrays;
    std::string metadata_json;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace trajlab::io
