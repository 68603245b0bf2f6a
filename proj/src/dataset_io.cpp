#include "seqvcr/dataset_io.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace seqvcr {

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << bytes;
  if (!out.flush()) throw std::runtime_error("write failed for " + path.string());
}

std::string render_split(const std::vector<Sample>& samples, const Vocab& vocab) {
  std::string out;
  for (const auto& s : samples) {
    out += sample_to_jsonl(s, vocab);
    out += '\n';
  }
  return out;
}

std::vector<Sample> parse_split(const std::string& bytes, const Vocab& vocab, const fs::path& path) {
  std::vector<Sample> out;
  std::istringstream in(bytes);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    try {
      out.push_back(sample_from_jsonl(line, vocab));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[digest[i] >> 4];
    hex += kHex[digest[i] & 0xf];
  }
  return hex;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

std::string sample_to_jsonl(const Sample& s, const Vocab& vocab) {
  nlohmann::ordered_json j;
  j["input"] = vocab.detokenize(s.input);
  j["cot"] = vocab.detokenize(s.cot);
  j["answer"] = vocab.detokenize(s.answer);
  j["meta"] = s.meta;
  return j.dump();
}

Sample sample_from_jsonl(std::string_view line, const Vocab& vocab) {
  const auto j = nlohmann::ordered_json::parse(line);
  Sample s;
  s.input = vocab.tokenize(j.at("input").get<std::string>());
  s.cot = vocab.tokenize(j.at("cot").get<std::string>());
  s.answer = vocab.tokenize(j.at("answer").get<std::string>());
  s.meta = j.at("meta");
  if (s.answer.empty()) throw std::runtime_error("record has an empty answer");
  return s;
}

void write_dataset(const fs::path& dir, const Dataset& ds, bool force) {
  if (fs::exists(dir / "manifest.json") && !force) {
    throw std::runtime_error(dir.string() + " already holds a dataset (use --force to overwrite)");
  }
  fs::create_directories(dir);
  const std::string train = render_split(ds.train, ds.vocab);
  const std::string test = render_split(ds.test, ds.vocab);
  write_file(dir / "train.jsonl", train);
  write_file(dir / "test.jsonl", test);

  nlohmann::ordered_json m;
  m["format"] = kDatasetFormat;
  m["spec"] = ds.spec.to_json();
  m["vocab"] = {{"separator", ds.vocab.separator()}, {"symbols", ds.vocab.symbols()}};
  m["counts"] = {{"train", ds.train.size()}, {"test", ds.test.size()}};
  m["files"] = {{"train.jsonl", {{"records", ds.train.size()}, {"sha256", sha256_hex(train)}}},
                {"test.jsonl", {{"records", ds.test.size()}, {"sha256", sha256_hex(test)}}}};
  write_file(dir / "manifest.json", m.dump(2) + "\n");
}

Dataset read_dataset(const fs::path& dir) {
  const auto m = nlohmann::json::parse(read_file(dir / "manifest.json"));
  if (m.at("format").get<std::string>() != kDatasetFormat) {
    throw std::runtime_error("unsupported dataset format " + m.at("format").dump());
  }
  Dataset ds{DatasetSpec::from_json(m.at("spec")),
             Vocab(m.at("vocab").at("symbols").get<std::vector<std::string>>(),
                   m.at("vocab").at("separator").get<std::string>()),
             {},
             {}};
  for (const char* name : {"train.jsonl", "test.jsonl"}) {
    const auto& entry = m.at("files").at(name);
    const std::string bytes = read_file(dir / name);
    if (sha256_hex(bytes) != entry.at("sha256").get<std::string>()) {
      throw std::runtime_error((dir / name).string() + " does not match its manifest hash");
    }
    auto samples = parse_split(bytes, ds.vocab, dir / name);
    if (samples.size() != entry.at("records").get<std::size_t>()) {
      throw std::runtime_error((dir / name).string() + " record count differs from manifest");
    }
    (std::string(name) == "train.jsonl" ? ds.train : ds.test) = std::move(samples);
  }
  return ds;
}

std::string dataset_hash(const fs::path& dir) { return sha256_file(dir / "manifest.json"); }

}  // namespace seqvcr
