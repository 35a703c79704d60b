#include "las/macs.hpp"

namespace las {

namespace {
thread_local MacsLedger* t_ledger = nullptr;
thread_local bool t_shapes_only = false;
thread_local std::vector<std::string> t_sections;
}  // namespace

void MacsLedger::record(std::string op, int64_t macs, std::vector<int64_t> geometry) {
  entries_.push_back({std::move(op), macs, std::move(geometry)});
  total_ += macs;
}

std::map<std::string, int64_t> MacsLedger::by_section() const {
  std::map<std::string, int64_t> out;
  for (const auto& e : entries_) {
    auto slash = e.op.find('/');
    out[slash == std::string::npos ? e.op : e.op.substr(0, slash)] += e.macs;
  }
  return out;
}

int64_t MacsLedger::total_with_prefix(const std::string& prefix) const {
  int64_t sum = 0;
  for (const auto& e : entries_)
    if (e.op.compare(0, prefix.size(), prefix) == 0) sum += e.macs;
  return sum;
}

void MacsLedger::clear() {
  entries_.clear();
  total_ = 0;
}

MacsScope::MacsScope(MacsLedger& ledger, bool shapes_only) : prev_(t_ledger), prev_shapes_only_(t_shapes_only) {
  t_ledger = &ledger;
  t_shapes_only = shapes_only;
}

MacsScope::~MacsScope() {
  t_ledger = prev_;
  t_shapes_only = prev_shapes_only_;
}

MacsSection::MacsSection(const std::string& name) { t_sections.push_back(name); }
MacsSection::~MacsSection() { t_sections.pop_back(); }

namespace macs {

void report(const char* kernel, int64_t count, std::vector<int64_t> geometry) {
  if (!t_ledger) return;
  std::string op;
  for (const auto& s : t_sections) {
    op += s;
    op += '/';
  }
  op += kernel;
  t_ledger->record(std::move(op), count, std::move(geometry));
}

bool shapes_only() { return t_ledger != nullptr && t_shapes_only; }

}  // namespace macs
}  // namespace las
