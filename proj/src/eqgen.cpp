#include "symgpt/eqgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace symgpt {

double AxisDomain::total_length() const {
  double t = 0.0;
  for (const auto& iv : intervals) t += iv.length();
  return t;
}

double AxisDomain::sample(Rng& rng) const {
  if (intervals.empty()) throw std::invalid_argument("empty axis domain");
  if (intervals.size() == 1) return rng.uniform(intervals[0].lo, intervals[0].hi);
  const double total = total_length();
  double u = rng.uniform() * total;
  for (const auto& iv : intervals) {
    if (u < iv.length()) return iv.lo + u;
    u -= iv.length();
  }
  return intervals.back().hi;
}

bool AxisDomain::contains(double v) const {
  for (const auto& iv : intervals)
    if (v >= iv.lo && v <= iv.hi) return true;
  return false;
}

std::unique_ptr<TemplateNode> generate_template(int k) {
  if (k < 1) throw std::invalid_argument("template depth must be >= 1");
  auto node = std::make_unique<TemplateNode>();
  if (k > 1) {
    node->left = generate_template(k - 1);
    node->right = generate_template(k - 1);
  }
  return node;
}

int template_internal_count(const TemplateNode& t) {
  if (t.is_leaf()) return 0;
  return 1 + template_internal_count(*t.left) + template_internal_count(*t.right);
}

int template_leaf_count(const TemplateNode& t) {
  if (t.is_leaf()) return 1;
  return template_leaf_count(*t.left) + template_leaf_count(*t.right);
}

namespace {

Expr::Ptr random_variable(int d, Rng& rng) {
  return Expr::variable(1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(d))));
}

Expr::Ptr decorate_rec(const TemplateNode& node, const GenConfig& cfg, int d, Rng& rng) {
  if (node.is_leaf()) return random_variable(d, rng);
  // Terminal marking happens before the operator draw.
  if (rng.bernoulli(cfg.terminal_prob)) return random_variable(d, rng);
  const Op op = cfg.ops[rng.uniform_int(cfg.ops.size())];
  auto left = decorate_rec(*node.left, cfg, d, rng);
  if (op.arity() == 1) return Expr::apply(op, std::move(left));  // right subtree discarded
  auto right = decorate_rec(*node.right, cfg, d, rng);
  return Expr::apply(op, std::move(left), std::move(right));
}

double snapped_constant(const GenConfig& cfg, Rng& rng) {
  const double raw = rng.uniform(cfg.c_min, cfg.c_max);
  return std::strtod(format_constant(raw, 4).c_str(), nullptr);
}

Expr::Ptr insert_rec(const Expr::Ptr& e, const GenConfig& cfg, Rng& rng, InsertStats* stats) {
  Expr::Ptr rebuilt = e;
  if (e->kind() == Expr::Kind::Apply) {
    auto left = insert_rec(e->child(0), cfg, rng, stats);
    if (e->num_children() == 2) {
      auto right = insert_rec(e->child(1), cfg, rng, stats);
      rebuilt = Expr::apply(e->op(), std::move(left), std::move(right));
    } else {
      rebuilt = Expr::apply(e->op(), std::move(left));
    }
  }
  if (stats) ++stats->nodes;
  if (rng.bernoulli(cfg.r)) {
    rebuilt = Expr::apply({OpKind::Mul}, Expr::constant(snapped_constant(cfg, rng)),
                          std::move(rebuilt));
    if (stats) ++stats->mul_inserted;
  }
  if (rng.bernoulli(cfg.r)) {
    rebuilt = Expr::apply({OpKind::Add}, std::move(rebuilt),
                          Expr::constant(snapped_constant(cfg, rng)));
    if (stats) ++stats->add_inserted;
  }
  return rebuilt;
}

}  // namespace

Expr::Ptr decorate(const TemplateNode& tpl, const GenConfig& cfg, int d, Rng& rng) {
  if (d < 1) throw std::invalid_argument("decorate: d must be >= 1");
  if (cfg.ops.empty()) throw std::invalid_argument("decorate: empty operator set");
  return decorate_rec(tpl, cfg, d, rng);
}

Expr::Ptr insert_constants(const Expr::Ptr& e, const GenConfig& cfg, Rng& rng,
                           InsertStats* stats) {
  return insert_rec(e, cfg, rng, stats);
}

std::optional<Instance> sample_dataset(const Expr::Ptr& e, const GenConfig& cfg,
                                       int d, int n, Rng& rng) {
  Instance inst;
  inst.d = d;
  inst.n = n;
  inst.X.reserve(static_cast<std::size_t>(n) * d);
  inst.y.reserve(n);

  std::vector<double> x(static_cast<std::size_t>(d));
  const std::int64_t max_draws = 100LL * n;
  std::int64_t draws = 0;
  while (static_cast<int>(inst.y.size()) < n && draws < max_draws) {
    ++draws;
    for (int j = 0; j < d; ++j) x[static_cast<std::size_t>(j)] = cfg.x_domain.sample(rng);
    const auto v = evaluate(*e, x);
    if (!v) continue;
    inst.X.insert(inst.X.end(), x.begin(), x.end());
    inst.y.push_back(*v);
  }
  if (static_cast<int>(inst.y.size()) < n) return std::nullopt;
  inst.expr = e;
  return inst;
}

std::optional<Instance> generate_instance(const GenConfig& cfg, Rng& rng, InsertStats* stats) {
  const int d = cfg.d_min +
                static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.d_max - cfg.d_min + 1)));
  const int n = cfg.n_min +
                static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.n_max - cfg.n_min + 1)));

  const auto tpl = generate_template(cfg.k);
  auto expr = decorate(*tpl, cfg, d, rng);
  InsertStats local;
  expr = insert_constants(expr, cfg, rng, &local);

  const std::string skeleton = to_infix_string(*skeletonize(expr));
  if (static_cast<int>(skeleton.size()) > cfg.max_skeleton_chars) return std::nullopt;

  auto inst = sample_dataset(expr, cfg, d, n, rng);
  if (!inst) return std::nullopt;
  inst->eq = to_infix_string(*expr);
  inst->skeleton = skeleton;
  if (stats) {
    stats->nodes += local.nodes;
    stats->mul_inserted += local.mul_inserted;
    stats->add_inserted += local.add_inserted;
  }
  return inst;
}

namespace {

void count_operators(const Expr& e, std::map<std::string, std::int64_t>& freq) {
  if (e.kind() == Expr::Kind::Apply) {
    ++freq[e.op().name()];
    for (int i = 0; i < e.num_children(); ++i) count_operators(*e.child(i), freq);
  }
}

}  // namespace

std::string instance_to_json_line(const Instance& inst) {
  nlohmann::json j;
  j["d"] = inst.d;
  j["n"] = inst.n;
  j["X"] = inst.X;
  j["y"] = inst.y;
  j["eq"] = inst.eq;
  j["skeleton"] = inst.skeleton;
  return j.dump();
}

Instance instance_from_json_line(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  Instance inst;
  inst.d = j.at("d").get<int>();
  inst.n = j.at("n").get<int>();
  inst.X = j.at("X").get<std::vector<double>>();
  inst.y = j.at("y").get<std::vector<double>>();
  inst.eq = j.at("eq").get<std::string>();
  inst.skeleton = j.at("skeleton").get<std::string>();
  if (inst.X.size() != static_cast<std::size_t>(inst.n) * inst.d ||
      inst.y.size() != static_cast<std::size_t>(inst.n))
    throw std::runtime_error("instance record has inconsistent shapes");
  if (!inst.eq.empty()) inst.expr = parse(inst.eq);
  return inst;
}

std::vector<Instance> load_corpus(const std::filesystem::path& file, std::int64_t limit) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open corpus file: " + file.string());
  std::vector<Instance> out;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(instance_from_json_line(line));
    } catch (const std::exception& ex) {
      throw std::runtime_error(file.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    }
    if (limit > 0 && static_cast<std::int64_t>(out.size()) >= limit) break;
  }
  return out;
}

CorpusStats generate_corpus(const GenConfig& cfg, std::int64_t count,
                            const std::filesystem::path& out,
                            const std::unordered_set<std::string>* blocked,
                            std::unordered_set<std::string>* record_into,
                            int threads) {
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  std::ofstream os(out, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open corpus output: " + out.string());

  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, threads);

  CorpusStats stats;
  bool have_y = false;

  // Attempt i draws from stream (seed, i), so acceptance of one attempt never
  // perturbs another and generation parallelizes deterministically.
  const std::int64_t chunk = std::max<std::int64_t>(64, 8LL * threads);
  std::int64_t next_attempt = 0;
  std::vector<std::optional<Instance>> candidates;
  std::vector<InsertStats> cand_stats;

  while (stats.count < count) {
    const std::int64_t chunk_begin = next_attempt;
    const std::int64_t chunk_size = chunk;
    candidates.assign(static_cast<std::size_t>(chunk_size), std::nullopt);
    cand_stats.assign(static_cast<std::size_t>(chunk_size), InsertStats{});

    auto worker = [&](std::int64_t from, std::int64_t to) {
      for (std::int64_t i = from; i < to; ++i) {
        Rng rng = Rng::derive(cfg.seed, {static_cast<std::uint64_t>(chunk_begin + i)});
        candidates[static_cast<std::size_t>(i)] =
            generate_instance(cfg, rng, &cand_stats[static_cast<std::size_t>(i)]);
      }
    };
    if (threads == 1 || chunk_size < 2 * threads) {
      worker(0, chunk_size);
    } else {
      std::vector<std::thread> pool;
      const std::int64_t per = (chunk_size + threads - 1) / threads;
      for (int t = 0; t < threads; ++t) {
        const std::int64_t from = t * per;
        const std::int64_t to = std::min(chunk_size, from + per);
        if (from < to) pool.emplace_back(worker, from, to);
      }
      for (auto& th : pool) th.join();
    }

    for (std::int64_t i = 0; i < chunk_size && stats.count < count; ++i) {
      ++stats.attempts;
      auto& cand = candidates[static_cast<std::size_t>(i)];
      if (!cand) {
        ++stats.rejected_sampling;
        continue;
      }
      if (blocked && blocked->count(cand->skeleton)) {
        ++stats.rejected_dedup;
        continue;
      }
      os << instance_to_json_line(*cand) << '\n';
      ++stats.count;
      if (record_into) record_into->insert(cand->skeleton);

      count_operators(*cand->expr, stats.operator_frequencies);
      stats.constant_count += constant_count(*cand->expr);
      const auto& cs = cand_stats[static_cast<std::size_t>(i)];
      stats.insert.nodes += cs.nodes;
      stats.insert.mul_inserted += cs.mul_inserted;
      stats.insert.add_inserted += cs.add_inserted;
      for (double v : cand->y) {
        if (!have_y) {
          stats.y_min = stats.y_max = v;
          have_y = true;
        } else {
          stats.y_min = std::min(stats.y_min, v);
          stats.y_max = std::max(stats.y_max, v);
        }
      }
      stats.max_skeleton_len = std::max(stats.max_skeleton_len,
                                        static_cast<std::int64_t>(cand->skeleton.size()));
    }
    next_attempt = chunk_begin + chunk_size;
  }
  os.close();
  if (!os) throw std::runtime_error("write failed for corpus output: " + out.string());

  nlohmann::json sj;
  sj["count"] = stats.count;
  sj["attempts"] = stats.attempts;
  sj["rejected_sampling"] = stats.rejected_sampling;
  sj["rejected_dedup"] = stats.rejected_dedup;
  sj["operator_frequencies"] = stats.operator_frequencies;
  sj["constant_count"] = stats.constant_count;
  sj["insert_nodes"] = stats.insert.nodes;
  sj["insert_mul"] = stats.insert.mul_inserted;
  sj["insert_add"] = stats.insert.add_inserted;
  sj["y_min"] = stats.y_min;
  sj["y_max"] = stats.y_max;
  sj["max_skeleton_len"] = stats.max_skeleton_len;
  std::ofstream ss(out.string() + ".stats.json", std::ios::binary);
  ss << sj.dump(2) << '\n';

  return stats;
}

}  // namespace symgpt
