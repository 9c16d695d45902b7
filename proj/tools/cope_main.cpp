// cope: command-line driver for data generation, training, export and evaluation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "cope/checkpoint.hpp"
#include "cope/config_file.hpp"
#include "cope/errors.hpp"
#include "cope/evalsuite.hpp"
#include "cope/manifest.hpp"
#include "cope/rng.hpp"
#include "cope/synthetic.hpp"
#include "cope/trainer.hpp"

namespace fs = std::filesystem;
using namespace cope;

namespace {

std::vector<std::uint32_t> parse_u32_list(const std::string& text, const char* what) {
  std::vector<std::uint32_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(static_cast<std::uint32_t>(v));
    } catch (const std::logic_error&) {
      throw ConfigError(std::string(what) + ": not a non-negative integer: '" + item + "'");
    }
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("failed writing: " + path.string());
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

// ---- gen-data

struct GenDataArgs {
  std::string out;
  std::uint32_t products = 10;
  std::string per_domain = "2,2,2";
  std::uint32_t frames = 8;
  std::uint64_t seed = 0;
  std::uint32_t categories = 3;
  std::uint32_t image_size = 32;
  std::uint32_t holdout = 0;
  double noise = 0.1;
};

int run_gen_data(const GenDataArgs& a) {
  SyntheticConfig cfg;
  cfg.n_products = a.products;
  cfg.n_categories = a.categories;
  const auto counts = parse_u32_list(a.per_domain, "--per-domain");
  if (counts.size() != 3) throw ConfigError("--per-domain expects three counts P,V,L");
  cfg.per_domain_counts = {counts[0], counts[1], counts[2]};
  cfg.frames_video = a.frames;
  cfg.frames_live = a.frames;
  cfg.image_size = a.image_size;
  cfg.noise_level = a.noise;
  cfg.seed = derive_seed(a.seed, "datagen");
  const Corpus corpus = generate_synthetic_corpus(cfg);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  save_manifest(corpus, dir / "manifest.jsonl");
  std::cout << "wrote " << corpus.samples().size() << " samples over " << corpus.products().size()
            << " products to " << (dir / "manifest.jsonl").string() << '\n';
  if (a.holdout > 0) {
    const auto [train, test] = split_holdout(corpus, a.holdout);
    save_manifest(train, dir / "train.jsonl");
    save_manifest(test, dir / "test.jsonl");
    std::cout << "split: " << train.samples().size() << " train, " << test.samples().size() << " test\n";
  }
  return 0;
}

// ---- train

struct TrainArgs {
  std::string manifest, config, out, log, eval_manifest;
  std::uint64_t seed = 0;
};

void write_log(const std::vector<StepRecord>& log, const fs::path& path) {
  std::ostringstream os;
  for (const auto& r : log) os << r.to_json_line() << '\n';
  write_text(path, os.str());
}

void print_epoch_summary(const std::vector<StepRecord>& log) {
  std::map<int, std::pair<double, int>> per_epoch;
  for (const auto& r : log) {
    auto& [sum, n] = per_epoch[r.epoch];
    sum += r.loss.total;
    ++n;
  }
  char buf[96];
  for (const auto& [epoch, v] : per_epoch) {
    std::snprintf(buf, sizeof buf, "epoch %3d  mean loss %.5f\n", epoch + 1, v.first / v.second);
    std::cout << buf;
  }
}

int run_train(const TrainArgs& a) {
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : load_train_config(a.config);
  cfg.seed = a.seed;
  const Corpus corpus = load_manifest(a.manifest);
  std::optional<Corpus> held_out;
  if (!a.eval_manifest.empty()) held_out = load_manifest(a.eval_manifest);
  const int every = cfg.eval_every_epochs > 0 ? cfg.eval_every_epochs : (held_out ? 1 : 0);
  nlohmann::ordered_json evals = nlohmann::ordered_json::array();
  EpochCallback on_epoch;
  if (held_out && every > 0) {
    on_epoch = [&](int epoch, const CopeModel& model) {
      if ((epoch + 1) % every != 0 && epoch + 1 != cfg.epochs) return;
      nlohmann::ordered_json row;
      row["epoch"] = epoch + 1;
      std::cout << "epoch " << epoch + 1 << " held-out R@1:";
      for (const auto& rep : retrieval_eval_all(export_embeddings(model, *held_out))) {
        const std::string dir = std::string(to_string(rep.query_domain)) + "2" + std::string(to_string(rep.gallery_domain));
        row[dir] = rep.to_json();
        std::printf(" %s %.2f", dir.c_str(), 100 * rep.recall.front());
      }
      std::cout << std::endl;
      evals.push_back(row);
    };
  }
  const TrainResult result = train(cfg, corpus, on_epoch);
  const fs::path out(a.out);
  ensure_parent(out);
  save_checkpoint(result.model, out);
  fs::path log_path = a.log.empty() ? fs::path(a.out + ".log.jsonl") : fs::path(a.log);
  write_log(result.log, log_path);
  print_epoch_summary(result.log);
  std::cout << "checkpoint: " << out.string() << "\nlog: " << log_path.string() << '\n';
  if (!evals.empty()) {
    std::string lines;
    for (const auto& e : evals) lines += e.dump() + "\n";
    write_text(a.out + ".eval.jsonl", lines);
    std::cout << "held-out evaluations: " << a.out << ".eval.jsonl\n";
  }
  return 0;
}

// ---- export

int run_export(const std::string& ckpt, const std::string& manifest, const std::string& out) {
  const CopeModel model = load_checkpoint(ckpt);
  const Corpus corpus = load_manifest(manifest);
  const EmbeddingTable table = export_embeddings(model, corpus);
  ensure_parent(out);
  save_embeddings(table, out);
  std::cout << "wrote " << table.size() << " x " << table.dim() << " embeddings to " << out << '\n';
  return 0;
}

// ---- eval

std::vector<int> parse_ks(const std::string& text) {
  std::vector<int> ks;
  for (auto v : parse_u32_list(text, "--ks")) ks.push_back(static_cast<int>(v));
  return ks;
}

int run_eval_retrieval(const std::string& emb, const std::string& query, const std::string& gallery,
                       const std::string& ks, const std::string& out) {
  const Domain q = parse_domain(query);
  const Domain g = parse_domain(gallery);
  if (q == g) throw ContractError("same-domain retrieval (" + query + "->" + gallery + ") is not supported");
  const EmbeddingTable table = load_embeddings(emb);
  const RetrievalReport rep = retrieval_eval(table, q, g, parse_ks(ks));
  std::cout << rep.to_table();
  if (!out.empty()) {
    ensure_parent(out);
    write_text(out, rep.to_json().dump(2) + "\n");
  }
  return 0;
}

int run_eval_fewshot(const std::string& emb, const std::string& anchor, const std::string& query,
                     std::uint64_t seed, int repeats, const std::string& out) {
  const EmbeddingTable table = load_embeddings(emb);
  const FewShotReport rep = few_shot_eval(table, parse_domain(anchor), parse_domain(query), seed, repeats);
  char buf[128];
  std::snprintf(buf, sizeof buf, "%s anchors, %s queries=%zu  accuracy %.3f +- %.3f over %zu repeats\n",
                anchor.c_str(), query.c_str(), rep.queries, 100 * rep.mean, 100 * rep.stddev,
                rep.accuracy_per_repeat.size());
  std::cout << buf;
  if (!out.empty()) {
    ensure_parent(out);
    write_text(out, rep.to_json().dump(2) + "\n");
  }
  return 0;
}

// ---- filter

int run_filter(const std::string& emb, double threshold, const std::string& out, const std::string& manifest) {
  const EmbeddingTable table = load_embeddings(emb);
  const auto pairs = candidate_pairs(table);
  const auto kept = bootstrap_filter(pairs, threshold);
  const auto products = aggregate_triples(kept);
  std::set<std::string> keep_ids;
  for (const auto& p : products) {
    for (const auto& ids : p.samples) keep_ids.insert(ids.begin(), ids.end());
  }
  ensure_parent(out);
  std::ostringstream os;
  if (!manifest.empty()) {
    const Corpus source = load_manifest(manifest);
    for (const Sample& s : source.samples()) {
      if (keep_ids.count(s.sample_id)) os << manifest_line(s) << '\n';
    }
  } else {
    for (const auto& p : kept) {
      if (!keep_ids.count(p.sample_id)) continue;
      nlohmann::ordered_json j;
      j["sample_id"] = p.sample_id;
      j["product_id"] = p.product_id;
      j["domain"] = std::string(to_string(p.domain));
      j["score"] = p.score;
      os << j.dump() << '\n';
    }
  }
  write_text(out, os.str());
  std::cout << pairs.size() << " candidates, " << kept.size() << " above " << threshold << ", "
            << products.size() << " complete products, " << keep_ids.size() << " samples kept\n";
  return 0;
}

// ---- ablate

struct AblateArgs {
  std::string manifest, test_manifest, config, grid, out;
  std::uint64_t seed = 0;
};

int run_ablate(const AblateArgs& a) {
  const TrainConfig base = a.config.empty() ? TrainConfig{} : load_train_config(a.config);
  TrainConfig with = base, without = base;
  with.seed = without.seed = a.seed;
  std::string label_with, label_without;
  if (a.grid == "cls-loss") {
    if (base.loss.beta == 0) with.loss.beta = LossWeights{}.beta;
    without.loss.beta = 0;
    label_with = "beta=" + std::to_string(with.loss.beta);
    label_without = "beta=0";
  } else if (a.grid == "sampling") {
    with.sampling = SamplingStrategy::balanced;
    without.sampling = SamplingStrategy::random;
    label_with = "balanced";
    label_without = "random";
  } else {
    throw ConfigError("--grid must be cls-loss or sampling, got '" + a.grid + "'");
  }

  const Corpus train_corpus = load_manifest(a.manifest);
  const Corpus test_corpus = a.test_manifest.empty() ? train_corpus : load_manifest(a.test_manifest);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_text(fs::path(a.out) / "config_a.txt", format_train_config(with));
    write_text(fs::path(a.out) / "config_b.txt", format_train_config(without));
  }

  std::array<std::vector<RetrievalReport>, 2> results;
  const std::array<const TrainConfig*, 2> cfgs{&with, &without};
  for (std::size_t i = 0; i < 2; ++i) {
    const TrainResult r = train(*cfgs[i], train_corpus);
    results[i] = retrieval_eval_all(export_embeddings(r.model, test_corpus));
  }

  nlohmann::ordered_json report;
  report["grid"] = a.grid;
  report["runs"] = {label_with, label_without};
  report["directions"] = nlohmann::ordered_json::array();
  std::ostringstream table;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-6s %14s %14s %14s %14s\n", "dir", ("R@1 " + label_with).c_str(),
                ("R@1 " + label_without).c_str(), ("Rmean " + label_with).c_str(),
                ("Rmean " + label_without).c_str());
  table << buf;
  int wins = 0;
  for (std::size_t d = 0; d < results[0].size(); ++d) {
    const auto& x = results[0][d];
    const auto& y = results[1][d];
    const std::string dir = std::string(to_string(x.query_domain)) + "2" + std::string(to_string(x.gallery_domain));
    std::snprintf(buf, sizeof buf, "%-6s %14.2f %14.2f %14.2f %14.2f\n", dir.c_str(), 100 * x.recall.front(),
                  100 * y.recall.front(), 100 * x.recall_mean, 100 * y.recall_mean);
    table << buf;
    if (x.recall.front() > y.recall.front()) ++wins;
    nlohmann::ordered_json e;
    e["direction"] = dir;
    e[label_with] = x.to_json();
    e[label_without] = y.to_json();
    report["directions"].push_back(e);
  }
  report["r1_wins"] = wins;
  table << label_with << " wins R@1 in " << wins << " of " << results[0].size() << " directions\n";
  std::cout << table.str();
  if (!a.out.empty()) write_text(fs::path(a.out) / "ablation.json", report.dump(2) + "\n");
  return 0;
}

// ---- project2d

int run_project2d(const std::string& emb, const std::string& out) {
  const EmbeddingTable table = load_embeddings(emb);
  const Matrix xy = project_2d(table);
  std::ostringstream os;
  os << "sample_id,product_id,domain,x,y\n";
  char buf[64];
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& m = table.meta()[i];
    std::snprintf(buf, sizeof buf, "%.9g,%.9g", xy(static_cast<Eigen::Index>(i), 0),
                  xy(static_cast<Eigen::Index>(i), 1));
    os << m.sample_id << ',' << m.product_id << ',' << to_string(m.domain) << ',' << buf << '\n';
  }
  ensure_parent(out);
  write_text(out, os.str());
  std::cout << "wrote " << table.size() << " points to " << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-domain product representation toolkit"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a seeded synthetic P/V/L corpus");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--products", gen.products, "Number of products");
  gen_cmd->add_option("--per-domain", gen.per_domain, "Samples per product for P,V,L");
  gen_cmd->add_option("--frames", gen.frames, "Frames per video and live-stream sample");
  gen_cmd->add_option("--seed", gen.seed, "Root seed");
  gen_cmd->add_option("--categories", gen.categories, "Number of categories");
  gen_cmd->add_option("--image-size", gen.image_size, "Frame height and width");
  gen_cmd->add_option("--noise", gen.noise, "Pixel noise level");
  gen_cmd->add_option("--holdout", gen.holdout,
                      "Also write train.jsonl/test.jsonl keeping this many samples per domain for training");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a manifest");
  train_cmd->add_option("--manifest", tr.manifest)->required();
  train_cmd->add_option("--config", tr.config, "key = value training config");
  train_cmd->add_option("--seed", tr.seed);
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  train_cmd->add_option("--log", tr.log, "Step log path (default: <out>.log.jsonl)");
  train_cmd->add_option("--eval-manifest", tr.eval_manifest,
                        "Held-out manifest scored every eval_every_epochs epochs into <out>.eval.jsonl");

  std::string ex_ckpt, ex_manifest, ex_out;
  auto* export_cmd = app.add_subcommand("export", "Write embeddings for every sample of a manifest");
  export_cmd->add_option("--ckpt", ex_ckpt)->required();
  export_cmd->add_option("--manifest", ex_manifest)->required();
  export_cmd->add_option("--out", ex_out)->required();

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate an embedding file");
  eval_cmd->require_subcommand(1);
  std::string r_emb, r_query, r_gallery, r_ks = "1,5,10,20,50", r_out;
  auto* ret_cmd = eval_cmd->add_subcommand("retrieval", "Cross-domain retrieval metrics");
  ret_cmd->add_option("--emb", r_emb)->required();
  ret_cmd->add_option("--query", r_query)->required();
  ret_cmd->add_option("--gallery", r_gallery)->required();
  ret_cmd->add_option("--ks", r_ks);
  ret_cmd->add_option("--out", r_out, "JSON report path");
  std::string f_emb, f_anchor, f_query, f_out;
  std::uint64_t f_seed = 0;
  int f_repeats = 5;
  auto* few_cmd = eval_cmd->add_subcommand("fewshot", "One-shot classification against drawn anchors");
  few_cmd->add_option("--emb", f_emb)->required();
  few_cmd->add_option("--anchor", f_anchor)->required();
  few_cmd->add_option("--query", f_query)->required();
  few_cmd->add_option("--seed", f_seed);
  few_cmd->add_option("--repeats", f_repeats);
  few_cmd->add_option("--out", f_out, "JSON report path");

  std::string fl_emb, fl_out, fl_manifest;
  double fl_threshold = 0.7;
  auto* filter_cmd = app.add_subcommand("filter", "Keep confidently matched samples of complete products");
  filter_cmd->add_option("--emb", fl_emb)->required();
  filter_cmd->add_option("--threshold", fl_threshold);
  filter_cmd->add_option("--out", fl_out)->required();
  filter_cmd->add_option("--manifest", fl_manifest, "Source manifest; output becomes a manifest subset");

  AblateArgs ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train an ablation pair and compare retrieval");
  ablate_cmd->add_option("--manifest", ab.manifest)->required();
  ablate_cmd->add_option("--test-manifest", ab.test_manifest, "Evaluation manifest (default: --manifest)");
  ablate_cmd->add_option("--config", ab.config);
  ablate_cmd->add_option("--grid", ab.grid)->required()->check(CLI::IsMember({"cls-loss", "sampling"}));
  ablate_cmd->add_option("--seed", ab.seed);
  ablate_cmd->add_option("--out", ab.out, "Directory for both configs and the JSON report");

  std::string p_emb, p_out;
  auto* proj_cmd = app.add_subcommand("project2d", "Principal-component projection to CSV");
  proj_cmd->add_option("--emb", p_emb)->required();
  proj_cmd->add_option("--out", p_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 1;
  }

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*train_cmd) return run_train(tr);
    if (*export_cmd) return run_export(ex_ckpt, ex_manifest, ex_out);
    if (*ret_cmd) return run_eval_retrieval(r_emb, r_query, r_gallery, r_ks, r_out);
    if (*few_cmd) return run_eval_fewshot(f_emb, f_anchor, f_query, f_seed, f_repeats, f_out);
    if (*filter_cmd) return run_filter(fl_emb, fl_threshold, fl_out, fl_manifest);
    if (*ablate_cmd) return run_ablate(ab);
    if (*proj_cmd) return run_project2d(p_emb, p_out);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
