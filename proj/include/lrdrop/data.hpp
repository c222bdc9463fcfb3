#pragma once

// Deterministic synthetic sequence-classification tasks:
//
//   parity       tokens in {0,1}, label = (count of 1s) mod 2
//   majority     tokens in {1,2}, label 1 iff 2s outnumber 1s, ties to 0
//   first-token  tokens in {0,1}, label = first token
//
// A dataset is regenerable bitwise from (task, size, seq_len, seed). Every
// example is drawn from its own derived stream and the final order comes
// from one seeded shuffle, so train/val/test prefixes and nested training
// subsets are stable no matter how the data is consumed.

#include <cstddef>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrdrop/rng.hpp"

namespace lrdrop {

struct Example {
  std::vector<int> tokens;
  int label = 0;
};

struct Dataset {
  std::string task;
  std::uint64_t seed = 0;
  std::size_t vocab_size = 0;   // task alphabet; the pad symbol is not part of it
  std::size_t num_classes = 0;
  std::size_t seq_len = 0;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
};

namespace detail {
inline int task_label(const std::string& task, const std::vector<int>& tokens) {
  if (task == "parity") {
    int ones = 0;
    for (int t : tokens) ones += t == 1;
    return ones % 2;
  }
  if (task == "majority") {
    int c1 = 0, c2 = 0;
    for (int t : tokens) (t == 1 ? c1 : c2) += 1;
    return c2 > c1 ? 1 : 0;
  }
  if (task == "first-token") return tokens.front();
  throw std::invalid_argument("generate_task: unknown task " + task);
}
}  // namespace detail

inline Dataset generate_task(const std::string& task, std::size_t size, std::size_t seq_len,
                             std::uint64_t seed) {
  if (size < 1 || seq_len < 1)
    throw std::invalid_argument("generate_task: size and seq_len must be positive");
  Dataset ds;
  ds.task = task;
  ds.seed = seed;
  ds.seq_len = seq_len;
  ds.num_classes = 2;
  int token_lo = 0;
  if (task == "parity" || task == "first-token") {
    ds.vocab_size = 2;
  } else if (task == "majority") {
    ds.vocab_size = 3;
    token_lo = 1;
  } else {
    throw std::invalid_argument("generate_task: unknown task " + task);
  }

  RngStream root(seed);
  RngStream example_root = root.fork("example");
  ds.examples.resize(size);
  for (std::size_t i = 0; i < size; ++i) {
    RngStream ex = example_root.fork(i);
    Example& e = ds.examples[i];
    e.tokens.resize(seq_len);
    for (std::size_t p = 0; p < seq_len; ++p)
      e.tokens[p] = token_lo + static_cast<int>(ex.next_u64() % 2);
    e.label = detail::task_label(task, e.tokens);
  }
  RngStream shuffle = root.fork("shuffle");
  for (std::size_t i = size; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(shuffle.next_u64() % i);
    std::swap(ds.examples[i - 1], ds.examples[j]);
  }
  return ds;
}

// First `size` examples of the fixed seed order, so smaller subsets are
// always contained in larger ones.
inline Dataset nested_subset(const Dataset& ds, std::size_t size) {
  if (size < 1 || size > ds.size())
    throw std::invalid_argument("nested_subset: size out of range");
  Dataset sub = ds;
  sub.examples.assign(ds.examples.begin(), ds.examples.begin() + static_cast<std::ptrdiff_t>(size));
  return sub;
}

struct DataSplit {
  Dataset train;
  Dataset val;
  Dataset test;
};

// 8:1:1 prefix split of the already-shuffled dataset order.
inline DataSplit split_dataset(const Dataset& ds) {
  const std::size_t n = ds.size();
  const std::size_t n_test = n / 10;
  const std::size_t n_val = n / 10;
  if (n_test == 0) throw std::invalid_argument("split_dataset: dataset too small to split");
  const std::size_t n_train = n - n_val - n_test;
  DataSplit split{ds, ds, ds};
  split.train.examples.assign(ds.examples.begin(), ds.examples.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.val.examples.assign(ds.examples.begin() + static_cast<std::ptrdiff_t>(n_train),
                            ds.examples.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  split.test.examples.assign(ds.examples.begin() + static_cast<std::ptrdiff_t>(n_train + n_val),
                             ds.examples.end());
  return split;
}

// Epoch-seeded shuffle of [0, n) followed by fixed-size chunking; the last
// batch may be short.
inline std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size,
                                                     RngStream epoch_rng) {
  if (batch_size < 1) throw std::invalid_argument("batches: batch_size must be positive");
  if (n == 0) throw std::invalid_argument("batches: empty dataset");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(epoch_rng.next_u64() % i);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

// Line format: label<TAB>space-separated token ids. Round-trip exact.
inline void dump_examples(const std::string& path, const std::vector<Example>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("dump_examples: cannot open " + path);
  for (const Example& e : examples) {
    out << e.label << '\t';
    for (std::size_t i = 0; i < e.tokens.size(); ++i) {
      if (i) out << ' ';
      out << e.tokens[i];
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("dump_examples: write failed for " + path);
}

inline std::vector<Example> load_examples(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_examples: cannot open " + path);
  std::vector<Example> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error("load_examples: malformed line in " + path);
    Example e;
    e.label = std::stoi(line.substr(0, tab));
    std::istringstream toks(line.substr(tab + 1));
    int t;
    while (toks >> t) e.tokens.push_back(t);
    if (e.tokens.empty()) throw std::runtime_error("load_examples: empty token list in " + path);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace lrdrop
