#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace las {

// Multiply-accumulate accounting. Kernels report into the ledger that is
// active on the calling thread (see MacsScope); with no active ledger the
// report is dropped.
class MacsLedger {
 public:
  struct Entry {
    std::string op;  // "<section>/<kernel>" or "<kernel>"
    int64_t macs = 0;
    // Convolutions: cin, d, h, w, cout, kd, kh, kw, sd, sh, sw, pd, ph, pw,
    // groups (2D convolutions have d = kd = sd = 1, pd = 0). Empty otherwise.
    std::vector<int64_t> geometry;
  };

  void record(std::string op, int64_t macs, std::vector<int64_t> geometry = {});
  const std::vector<Entry>& entries() const { return entries_; }
  int64_t total() const { return total_; }
  // Totals grouped by the first path component of the op name.
  std::map<std::string, int64_t> by_section() const;
  // Totals of entries whose op name starts with `prefix`.
  int64_t total_with_prefix(const std::string& prefix) const;
  void clear();

 private:
  std::vector<Entry> entries_;
  int64_t total_ = 0;
};

// Activates a ledger on this thread for the lifetime of the scope. In
// shapes-only mode, convolution kernels skip their arithmetic and return
// zero-filled outputs of the correct shape, which keeps profiling of large
// configurations cheap.
class MacsScope {
 public:
  explicit MacsScope(MacsLedger& ledger, bool shapes_only = false);
  ~MacsScope();
  MacsScope(const MacsScope&) = delete;
  MacsScope& operator=(const MacsScope&) = delete;

 private:
  MacsLedger* prev_;
  bool prev_shapes_only_;
};

// Pushes a section name ("backbone", "aggregation/g3d", ...) for op labels.
class MacsSection {
 public:
  explicit MacsSection(const std::string& name);
  ~MacsSection();
  MacsSection(const MacsSection&) = delete;
  MacsSection& operator=(const MacsSection&) = delete;
};

namespace macs {
void report(const char* kernel, int64_t count, std::vector<int64_t> geometry = {});
bool shapes_only();
}  // namespace macs

}  // namespace las
