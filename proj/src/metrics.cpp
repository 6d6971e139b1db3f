#include "fsl/metrics.hpp"

#include <algorithm>
#include <map>
#include <ostream>

#include <fmt/format.h>

#include "fsl/errors.hpp"

namespace fsl {

namespace {

void check_lengths(std::span<const std::size_t> pred, std::span<const std::size_t> truth) {
  if (pred.size() != truth.size()) {
    throw ShapeError(fmt::format("{} predictions for {} labels", pred.size(), truth.size()));
  }
  if (pred.empty()) throw ShapeError("no predictions to score");
}

}  // namespace

double accuracy(std::span<const std::size_t> pred, std::span<const std::size_t> truth) {
  check_lengths(pred, truth);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
  return double(hits) / double(pred.size());
}

double macro_f1(std::span<const std::size_t> pred, std::span<const std::size_t> truth, std::size_t n_classes) {
  check_lengths(pred, truth);
  if (n_classes == 0) throw ContractError("macro_f1 needs at least one class");
  std::vector<std::size_t> tp(n_classes), fp(n_classes), fn(n_classes);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= n_classes || truth[i] >= n_classes) {
      throw IndexError(fmt::format("label {} outside 0..{}", std::max(pred[i], truth[i]), n_classes - 1));
    }
    if (pred[i] == truth[i]) {
      ++tp[pred[i]];
    } else {
      ++fp[pred[i]];
      ++fn[truth[i]];
    }
  }
  double total = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    // 2PR/(P+R) = 2tp / (2tp + fp + fn), and 0 when tp = 0.
    if (tp[c] > 0) total += 2.0 * double(tp[c]) / double(2 * tp[c] + fp[c] + fn[c]);
  }
  return total / double(n_classes);
}

void BenchmarkReport::finalize() {
  n_tasks = episodes.size();
  double acc = 0, f1 = 0;
  for (const auto& e : episodes) {
    acc += e.accuracy;
    f1 += e.macro_f1;
  }
  mean_accuracy = episodes.empty() ? 0 : acc / double(episodes.size());
  mean_macro_f1 = episodes.empty() ? 0 : f1 / double(episodes.size());
}

std::string structured_line(const BenchmarkReport& r) {
  return fmt::format("protocol={}\thead={}\tshot={}\taccuracy={:.6f}\tf1={:.6f}", r.protocol, r.head, r.shot,
                     r.mean_accuracy, r.mean_macro_f1);
}

void write_structured(std::ostream& out, std::span<const BenchmarkReport> reports) {
  for (const auto& r : reports) out << structured_line(r) << "\n";
}

void write_table(std::ostream& out, std::span<const BenchmarkReport> reports) {
  std::vector<std::string> heads;
  std::vector<std::size_t> shots;
  std::map<std::pair<std::string, std::size_t>, const BenchmarkReport*> cell;
  for (const auto& r : reports) {
    if (std::find(heads.begin(), heads.end(), r.head) == heads.end()) heads.push_back(r.head);
    if (std::find(shots.begin(), shots.end(), r.shot) == shots.end()) shots.push_back(r.shot);
    cell[{r.head, r.shot}] = &r;
  }
  std::sort(shots.begin(), shots.end());
  std::string header = fmt::format("{:<14}", "head");
  std::string sub = fmt::format("{:<14}", "");
  for (auto k : shots) {
    header += fmt::format(" | {:^16}", fmt::format("{}-shot", k));
    sub += fmt::format(" | {:>8} {:>7}", "Acc(%)", "F1");
  }
  out << header << "\n" << sub << "\n" << std::string(header.size(), '-') << "\n";
  for (const auto& h : heads) {
    std::string line = fmt::format("{:<14}", h);
    for (auto k : shots) {
      auto it = cell.find({h, k});
      if (it == cell.end()) {
        line += fmt::format(" | {:>8} {:>7}", "-", "-");
      } else {
        line += fmt::format(" | {:>8.2f} {:>7.2f}", 100.0 * it->second->mean_accuracy, it->second->mean_macro_f1);
      }
    }
    out << line << "\n";
  }
}

}  // namespace fsl
