#pragma once

#include <cstdint>
#include <functional>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

namespace artclf {

namespace fs = std::filesystem;

/// 64-bit FNV-1a. Used for config and checkpoint fingerprints, which must be
/// stable across runs and platforms (std::hash is not).
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

/// Hash of the raw bytes of a tensor list, in order. Tensors are made
/// contiguous on CPU first.
std::uint64_t hash_tensors(const std::vector<torch::Tensor>& tensors);

/// Derive a child seed from a parent seed and a label.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

/// Minimal CSV reader: comma separated, optional double quotes, no embedded
/// newlines. Returns rows including the header.
std::vector<std::vector<std::string>> read_csv(const fs::path& path);

std::string trim(std::string_view s);

/// Write text atomically enough for run artifacts: write to `path.tmp` and
/// rename over the target.
void write_text(const fs::path& path, std::string_view text);
std::string read_text(const fs::path& path);

/// Copy tensors from a pickled name->tensor dict (as written by
/// `torch.save(dict(model.state_dict()), path)`) into the module's
/// parameters and buffers, matched by name. Entries the module lacks are
/// ignored; a module tensor missing from the file is an error.
void load_state_dict(torch::nn::Module& module, const fs::path& path);

/// Run `fn(i)` for i in [0, n) across up to `workers` threads. Exceptions are
/// rethrown on the caller thread (first one wins).
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace artclf
