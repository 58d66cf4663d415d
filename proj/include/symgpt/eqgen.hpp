#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "symgpt/expr.hpp"
#include "symgpt/rng.hpp"

namespace symgpt {

struct Interval {
  double lo = 0.0, hi = 0.0;
  double length() const { return hi - lo; }
};

// Union of intervals on one axis; sampling picks an interval with probability
// proportional to its length, then uniformly inside it. The same union is
// applied to every coordinate, so the overall x-domain is a union of
// axis-aligned boxes (a grid of them).
struct AxisDomain {
  std::vector<Interval> intervals;

  static AxisDomain box(double lo, double hi) { return {{{lo, hi}}}; }
  static AxisDomain bands(std::vector<Interval> parts) { return {std::move(parts)}; }

  double total_length() const;
  double sample(Rng& rng) const;
  bool contains(double v) const;
};

struct GenConfig {
  int k = 4;                 // max tree levels
  int d_min = 1, d_max = 1;  // variable count, sampled per instance when a range
  std::vector<Op> ops = Op::all();
  double r = 0.5;            // constant ratio
  double c_min = -2.1, c_max = 2.1;
  int n_min = 30, n_max = 30;  // points per instance, sampled per instance
  AxisDomain x_domain = AxisDomain::box(-3.0, 3.0);
  double terminal_prob = 0.2;
  std::uint64_t seed = 0;
  // Skeletons longer than this are discarded so every instance fits the
  // model's 200-token output cap.
  int max_skeleton_chars = 198;
};

// One symbolic-regression problem. X is row-major n×d.
struct Instance {
  int d = 0;
  int n = 0;
  std::vector<double> X;
  std::vector<double> y;
  Expr::Ptr expr;  // parsed ground truth (present after generation or load)
  std::string eq;
  std::string skeleton;
};

// Blank perfectly balanced binary tree of depth k.
struct TemplateNode {
  std::unique_ptr<TemplateNode> left, right;
  bool is_leaf() const { return !left; }
};

std::unique_ptr<TemplateNode> generate_template(int k);
int template_internal_count(const TemplateNode& t);
int template_leaf_count(const TemplateNode& t);

// Fills a template: leaves get uniform variables from x1..xd, internal nodes
// uniform operators; unary operators drop the right subtree; internal nodes
// are first marked terminal with probability terminal_prob, replacing their
// subtree with a single random variable leaf.
Expr::Ptr decorate(const TemplateNode& tpl, const GenConfig& cfg, int d, Rng& rng);

struct InsertStats {
  std::int64_t nodes = 0;
  std::int64_t mul_inserted = 0;
  std::int64_t add_inserted = 0;
};

// Per node of e (children first): with probability r wrap in a multiplicative
// constant, then independently with probability r add an additive constant.
// Constants are uniform in [c_min, c_max], snapped to 4 significant digits so
// serialized corpora round-trip exactly.
Expr::Ptr insert_constants(const Expr::Ptr& e, const GenConfig& cfg, Rng& rng,
                           InsertStats* stats = nullptr);

// Uniform draws from x_domain with rejection of domain-erroring points.
// nullopt ("GenerationRejected") if 100*n draws yield fewer than n points.
std::optional<Instance> sample_dataset(const Expr::Ptr& e, const GenConfig& cfg,
                                       int d, int n, Rng& rng);

// Full instance pipeline: sample d and n, build/decorate/insert, skeletonize,
// sample the dataset. nullopt when the attempt is rejected (domain, length).
std::optional<Instance> generate_instance(const GenConfig& cfg, Rng& rng,
                                          InsertStats* stats = nullptr);

struct CorpusStats {
  std::int64_t count = 0;
  std::int64_t attempts = 0;
  std::int64_t rejected_sampling = 0;
  std::int64_t rejected_dedup = 0;
  std::map<std::string, std::int64_t> operator_frequencies;
  std::int64_t constant_count = 0;
  InsertStats insert;
  double y_min = 0.0, y_max = 0.0;
  std::int64_t max_skeleton_len = 0;
};

// Writes `count` instances as JSONL (one object per line, keys
// {X,d,eq,n,skeleton,y}) plus a ".stats.json" sidecar. Instances whose
// skeleton is in `blocked` are skipped (cross-split dedup); accepted skeletons
// are added to `record_into` when given. Deterministic for a fixed config:
// attempt i draws from an independent stream derived from (seed, i).
CorpusStats generate_corpus(const GenConfig& cfg, std::int64_t count,
                            const std::filesystem::path& out,
                            const std::unordered_set<std::string>* blocked = nullptr,
                            std::unordered_set<std::string>* record_into = nullptr,
                            int threads = 0);

std::string instance_to_json_line(const Instance& inst);
Instance instance_from_json_line(const std::string& line);

std::vector<Instance> load_corpus(const std::filesystem::path& file, std::int64_t limit = 0);

}  // namespace symgpt
