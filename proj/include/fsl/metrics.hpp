#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace fsl {

// Fraction of exact matches. ShapeError on a length mismatch or empty input.
double accuracy(std::span<const std::size_t> pred, std::span<const std::size_t> truth);

// Unweighted mean over classes 0..n_classes-1 of 2PR/(P+R); a class with
// P+R = 0 scores 0.
double macro_f1(std::span<const std::size_t> pred, std::span<const std::size_t> truth, std::size_t n_classes);

struct EpisodeRecord {
  std::size_t index = 0;
  double accuracy = 0;
  double macro_f1 = 0;
};

struct BenchmarkReport {
  std::string protocol;
  std::string head;
  std::size_t shot = 0;
  std::size_t n_way = 0;
  std::size_t n_tasks = 0;
  std::uint64_t seed = 0;
  double mean_accuracy = 0;
  double mean_macro_f1 = 0;
  std::vector<EpisodeRecord> episodes;

  // Recomputes the means from the episode records.
  void finalize();
};

// One line per report: protocol=..<TAB>head=..<TAB>shot=..<TAB>accuracy=..<TAB>f1=..
std::string structured_line(const BenchmarkReport& r);
void write_structured(std::ostream& out, std::span<const BenchmarkReport> reports);

// Head rows x shot column groups, accuracy in percent and F1.
void write_table(std::ostream& out, std::span<const BenchmarkReport> reports);

}  // namespace fsl
