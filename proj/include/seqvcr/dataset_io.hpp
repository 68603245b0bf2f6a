#pragma once

// On-disk dataset layout: <dir>/train.jsonl, <dir>/test.jsonl and
// <dir>/manifest.json. Each JSONL line is
//   {"input": ..., "cot": ..., "answer": ..., "meta": {...}}
// with the token strings rendered through the dataset vocabulary. The
// manifest holds the generating spec, the vocabulary, record counts, and
// the SHA-256 of each file, and contains nothing time-dependent, so equal
// specs give byte-identical directories.

#include <filesystem>
#include <string>
#include <string_view>

#include "seqvcr/taskgen.hpp"

namespace seqvcr {

inline constexpr const char* kDatasetFormat = "seqvcr-dataset/1";

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string sample_to_jsonl(const Sample& s, const Vocab& vocab);
Sample sample_from_jsonl(std::string_view line, const Vocab& vocab);

/// Writes the three files. Refuses to replace an existing dataset unless force is set.
void write_dataset(const std::filesystem::path& dir, const Dataset& ds, bool force = false);
/// Reads and verifies every file hash and record count against the manifest.
Dataset read_dataset(const std::filesystem::path& dir);
/// Hash of the manifest file, identifying the dataset as a whole.
std::string dataset_hash(const std::filesystem::path& dir);

}  // namespace seqvcr
