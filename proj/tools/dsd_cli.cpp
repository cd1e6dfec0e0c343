#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dsd/dsd.hpp"

namespace fs = std::filesystem;
using namespace dsd;
using nlohmann::json;

namespace {

std::vector<StrokeSequence> read_samples(const fs::path& p) {
  LoadResult r = load_dataset(p);
  for (const auto& d : r.diagnostics) std::cerr << "warning: " << p.string() << ": " << d << '\n';
  for (const auto& w : r.warnings) std::cerr << "warning: " << p.string() << ": " << w << '\n';
  if (r.samples.empty()) throw Error(p.string() + ": no valid samples");
  return r.samples;
}

std::vector<StrokeSequence> require_eoc(std::vector<StrokeSequence> v, const fs::path& p) {
  for (const auto& s : v)
    if (!s.has_eoc) throw Error(p.string() + ": sample '" + s.text + "' has no eoc labels (run `segment` first)");
  return v;
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

void write_samples(const fs::path& p, const std::vector<StrokeSequence>& v) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_dataset(p, v);
}

std::vector<double> as_vec(const ad::Var& v) { return {v.value().begin(), v.value().end()}; }

std::vector<std::vector<double>> char_writer_dsds(DsdModel& model, const std::string& text,
                                                  const std::vector<double>& w) {
  ad::Tape t;
  const auto cs = model.char_dsd(t, Alphabet::default_alphabet().indices(text));
  ad::Var wv = t.constant(w.size(), 1, w);
  std::vector<std::vector<double>> out;
  for (const auto& c : cs) out.push_back(as_vec(ad::matmul(c, wv)));
  return out;
}

struct Decoded {
  StrokeSequence sample;
  bool truncated = false;
};

Decoded decode(const DsdModel& model, const std::vector<std::vector<double>>& wcts, const std::string& text,
               const std::string& writer, std::mt19937_64& rng, std::size_t max_steps, double temperature) {
  if (max_steps == 0) max_steps = 80 * wcts.size();
  DecodeResult r = model.decode_strokes(wcts, rng, max_steps, temperature);
  r.sequence.text = text;
  r.sequence.writer_id = writer;
  return {std::move(r.sequence), r.truncated};
}

int report_truncation(std::size_t truncated, std::size_t total) {
  std::cerr << "note: " << truncated << " of " << total
            << " outputs truncated: the decoder hit the step limit before drawing every character; eoc labels dropped\n";
  return 2;
}

// ---- subcommands ----

struct IngestArgs {
  fs::path in, out;
  double origin_x = 0.0, origin_y = 80.0;
  bool reorder = false;
};

int run_ingest(const IngestArgs& a) {
  std::ifstream in(a.in);
  if (!in) throw Error("cannot read " + a.in.string());
  std::vector<StrokeSequence> out;
  std::string line;
  std::size_t lineno = 0, skipped = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      Strokes strokes;
      for (const auto& st : j.at("strokes")) {
        std::vector<Point2> pts;
        for (const auto& p : st) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        if (!pts.empty()) strokes.push_back(std::move(pts));
      }
      StrokeSequence s = delta_encode(strokes, Point2{a.origin_x, a.origin_y});
      s.writer_id = j.at("writer_id").get<std::string>();
      s.text = j.at("text").get<std::string>();
      if (j.contains("eoc")) {
        const auto& e = j["eoc"];
        if (!e.is_array() || e.size() != s.size()) throw ParseError("eoc length differs from point count");
        for (std::size_t i = 0; i < s.size(); ++i) s.points[i].eoc = e[i].get<int>() ? 1 : 0;
        s.has_eoc = true;
      }
      if (a.reorder) s = reorder_delayed_strokes(s);
      validate(s);
      out.push_back(std::move(s));
    } catch (const std::exception& e) {
      std::cerr << "warning: " << a.in.string() << ": line " << lineno << ": " << e.what() << '\n';
      ++skipped;
    }
  }
  if (out.empty()) throw Error(a.in.string() + ": no valid records");
  write_samples(a.out, out);
  std::cerr << "ingested " << out.size() << " samples (" << skipped << " skipped)\n";
  return 0;
}

struct SynthArgs {
  std::size_t writers = 8, words = 40;
  std::vector<std::string> word_list;
  std::uint64_t seed = 0;
  fs::path out;
};

int run_synth(const SynthArgs& a) {
  std::vector<std::string> words = a.word_list;
  if (words.empty()) {
    const auto& all = default_words();
    if (a.words == 0 || a.words > all.size())
      throw Error("--words must be in [1, " + std::to_string(all.size()) + "]");
    words.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(a.words));
  }
  if (a.writers == 0) throw Error("--writers must be positive");
  write_samples(a.out, synth_corpus(random_styles(a.writers, a.seed), words, a.seed));
  return 0;
}

struct SegmentArgs {
  fs::path data, out, model, labelled;
  bool fit = false;
  std::size_t steps = 500, batch = 4, hidden = 128, layers = 3;
  std::uint64_t seed = 0;
};

int run_segment(const SegmentArgs& a) {
  const Alphabet& alphabet = Alphabet::default_alphabet();
  const auto data = read_samples(a.data);
  if (a.fit) {
    if (a.out.empty()) throw Error("segment --fit needs --out");
    SegNetConfig cfg;
    cfg.hidden = a.hidden;
    cfg.layers = a.layers;
    SegNet net(cfg, a.seed);
    SegTrainConfig tc;
    tc.steps = a.steps;
    tc.batch = a.batch;
    tc.seed = a.seed;
    train_segmenter(net, data, alphabet, tc, [&](std::size_t step, double loss) {
      if ((step + 1) % 50 == 0 || step + 1 == tc.steps)
        std::cerr << "segment step " << step + 1 << " loss " << format_double(loss) << '\n';
    });
    save_checkpoint(a.out, net.params(),
                    {{"kind", "segmenter"}, {"hidden", std::to_string(a.hidden)}, {"layers", std::to_string(a.layers)}});
    return 0;
  }
  if (a.model.empty() || a.labelled.empty()) throw Error("segment needs --fit, or --model and --labelled");
  const CheckpointMeta m = read_checkpoint_meta(a.model);
  if (!m.contains("hidden") || !m.contains("layers")) throw ParseError(a.model.string() + ": not a segmenter");
  SegNetConfig cfg;
  cfg.hidden = std::stoul(m.at("hidden"));
  cfg.layers = std::stoul(m.at("layers"));
  SegNet net(cfg, 0);
  load_checkpoint(a.model, net.params());
  std::vector<StrokeSequence> out;
  for (const auto& s : data) out.push_back(segment(net, s, alphabet));
  write_samples(a.labelled, out);
  return 0;
}

struct TrainArgs {
  fs::path data, out;
  TrainConfig cfg;
  std::string ablate;
  bool wall_time = false;
};

int run_train(TrainArgs a) {
  const auto data = require_eoc(read_samples(a.data), a.data);
  a.cfg.ablation = parse_ablation(a.ablate);
  a.cfg.check();
  DsdConfig mc;
  mc.latent = a.cfg.latent;
  mc.components = a.cfg.components;
  DsdModel model(mc, a.cfg.seed);
  model.set_delta_scale(corpus_delta_scale(data));
  std::cerr << "model parameters: " << model.params().total_size() << '\n';
  fs::create_directories(a.out);
  std::ofstream log(a.out / "train_log.jsonl", std::ios::binary);
  if (!log) throw Error("cannot write " + (a.out / "train_log.jsonl").string());
  TrainSink sink{&log, a.out, a.wall_time};
  train(model, data, a.cfg, sink, [&](std::size_t step, const LossBreakdown& lb) {
    if (step % a.cfg.log_every == 0 || step == a.cfg.steps)
      std::cerr << "step " << step << " loss " << format_double(lb.total) << '\n';
  });
  return 0;
}

struct GenerateArgs {
  fs::path model, refs, out, svg;
  std::string text, writer;
  std::uint64_t seed = 0;
  std::size_t max_steps = 0;
  double temperature = 1.0;
};

int run_generate(const GenerateArgs& a) {
  DsdModel model = DsdModel::load(a.model);
  auto refs = require_eoc(read_samples(a.refs), a.refs);
  if (!a.writer.empty()) std::erase_if(refs, [&](const auto& s) { return s.writer_id != a.writer; });
  if (refs.empty()) throw Error("no reference samples for writer '" + a.writer + "'");
  const DsdDatabase db = build_database(model, refs);
  for (const auto& msg : db.log) std::cerr << "database: " << msg << '\n';
  const auto wcts = sample_wcts(model, db, a.text);
  std::mt19937_64 rng(a.seed);
  Decoded d = decode(model, wcts, a.text, a.writer.empty() ? refs.front().writer_id : a.writer, rng, a.max_steps,
                     a.temperature);
  write_samples(a.out, {d.sample});
  if (!a.svg.empty()) {
    RenderSpec spec;
    spec.color_by_char = d.sample.has_eoc;
    write_text(a.svg, render_svg(d.sample, spec));
  }
  return d.truncated ? report_truncation(1, 1) : 0;
}

struct InterpArgs {
  fs::path model, a, b, out, svg;
  std::string level = "w", text, chars;
  std::vector<double> gammas = {0.0, 0.25, 0.5, 0.75, 1.0};
  std::uint64_t seed = 0;
  std::size_t max_steps = 0;
  double temperature = 0.0;
};

int run_interp(const InterpArgs& a) {
  DsdModel model = DsdModel::load(a.model);
  const auto refs_a = require_eoc(read_samples(a.a), a.a);
  std::vector<StrokeSequence> outputs;
  std::size_t truncated = 0, columns = a.gammas.size();
  std::mt19937_64 rng(a.seed);
  auto emit = [&](const std::vector<std::vector<double>>& wcts, const std::string& text, const std::string& label) {
    Decoded d = decode(model, wcts, text, label, rng, a.max_steps, a.temperature);
    truncated += d.truncated ? 1 : 0;
    outputs.push_back(std::move(d.sample));
  };

  if (a.level == "w" || a.level == "wct") {
    if (a.b.empty() || a.text.empty()) throw Error("interp --level " + a.level + " needs --b and --text");
    const auto refs_b = require_eoc(read_samples(a.b), a.b);
    if (a.level == "w") {
      const auto wa = writer_dsd(model, refs_a), wb = writer_dsd(model, refs_b);
      for (double g : a.gammas)
        emit(char_writer_dsds(model, a.text, interpolate_writer(wa, wb, g)), a.text, "gamma=" + format_number(g));
    } else {
      const auto xa = sample_wcts(model, build_database(model, refs_a), a.text);
      const auto xb = sample_wcts(model, build_database(model, refs_b), a.text);
      for (double g : a.gammas) {
        std::vector<std::vector<double>> wcts;
        for (std::size_t i = 0; i < xa.size(); ++i) wcts.push_back(interpolate_writer(xa[i], xb[i], g));
        emit(wcts, a.text, "gamma=" + format_number(g));
      }
    }
  } else if (a.level == "C") {
    const auto chars = utf8_decode(a.chars);
    if (chars.size() != 2 && chars.size() != 4) throw Error("interp --level C needs --chars with 2 or 4 characters");
    const auto w = writer_dsd(model, refs_a);
    const std::size_t L = model.latent();
    std::array<Tensor, 4> corners;
    for (std::size_t k = 0; k < 4; ++k) {
      ad::Tape t;
      const std::string c = utf8_encode(std::u32string(1, chars[k % chars.size()]));
      corners[k] = model.char_dsd(t, Alphabet::default_alphabet().indices(c))[0].tensor();
    }
    auto emit_c = [&](const std::array<double, 4>& r, const std::string& label) {
      const Tensor c = interpolate_char_bilinear(corners, r);
      std::vector<double> wct(L, 0.0);
      for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j) wct[i] += c(i, j) * w[j];
      emit({wct}, utf8_encode(std::u32string(1, chars[0])), label);
    };
    if (chars.size() == 2) {
      for (double g : a.gammas) emit_c({g, 1.0 - g, 0.0, 0.0}, "gamma=" + format_number(g));
    } else {
      for (double v : a.gammas)
        for (double u : a.gammas) emit_c(bilinear_weights(u, v), "u=" + format_number(u) + ",v=" + format_number(v));
    }
  } else {
    throw Error("--level must be w, wct or C");
  }
  write_samples(a.out, outputs);
  if (!a.svg.empty()) {
    RenderSpec spec;
    spec.color_by_char = a.level != "C";
    write_text(a.svg, render_svg_grid(outputs, columns, spec));
  }
  return truncated ? report_truncation(truncated, outputs.size()) : 0;
}

struct NewCharArgs {
  fs::path model, pairs, out;
  std::string mode = "direct";
};

int run_newchar(const NewCharArgs& a) {
  std::ifstream in(a.pairs);
  if (!in) throw Error("cannot read " + a.pairs.string());
  std::vector<DsdPair> pairs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = json::parse(line);
    pairs.emplace_back(j.at("w").get<std::vector<double>>(), j.at("w_new").get<std::vector<double>>());
  }
  NewCharResult r;
  if (a.mode == "direct") {
    r = estimate_direct_lsq(pairs);
  } else if (a.mode == "latent") {
    if (a.model.empty()) throw Error("newchar --mode latent needs --model");
    r = estimate_latent_lbfgsb(DsdModel::load(a.model), pairs);
  } else {
    throw Error("--mode must be direct or latent");
  }
  json out;
  out["mode"] = a.mode;
  out["rows"] = r.c.rows();
  out["cols"] = r.c.cols();
  out["objective"] = r.objective;
  out["converged"] = r.converged;
  out["iterations"] = r.iterations;
  out["c"] = r.c.storage();
  write_text(a.out, out.dump() + "\n");
  return r.converged ? 0 : 2;
}

struct IdentifyArgs {
  fs::path model, codebook, queries, out;
  std::size_t words = 0;
};

int run_identify(const IdentifyArgs& a) {
  DsdModel model = DsdModel::load(a.model);
  const Codebook cb = build_codebook(model, require_eoc(read_samples(a.codebook), a.codebook));
  const auto qs = require_eoc(read_samples(a.queries), a.queries);
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::vector<double>>> by_writer;
  for (const auto& s : qs) {
    if (!by_writer.contains(s.writer_id)) order.push_back(s.writer_id);
    by_writer[s.writer_id].push_back(writer_dsd(model, s));
  }
  std::vector<QueryGroup> groups;
  for (const auto& wid : order) {
    const auto& v = by_writer[wid];
    const std::size_t k = a.words == 0 ? v.size() : a.words;
    for (std::size_t b = 0; b + k <= v.size(); b += k)
      groups.push_back({wid, {v.begin() + static_cast<std::ptrdiff_t>(b), v.begin() + static_cast<std::ptrdiff_t>(b + k)}});
  }
  if (groups.empty()) throw Error("no query group has --words samples");
  const IdentifyResult r = identify_writers(cb, groups);
  json out;
  out["accuracy"] = r.accuracy;
  out["queries"] = json::array();
  for (std::size_t i = 0; i < groups.size(); ++i)
    out["queries"].push_back(
        {{"label", groups[i].label}, {"predicted", cb.writers[r.predictions[i]]}, {"words", groups[i].word_dsds.size()}});
  const std::string text = out.dump(2) + "\n";
  if (a.out.empty())
    std::cout << text;
  else
    write_text(a.out, text);
  return 0;
}

struct AuditArgs {
  fs::path model, out;
  std::size_t max_len = 2, samples = 1000;
  std::string chars = "abcdefghijklmnopqrstuvwxyz";
  std::uint64_t seed = 0;
};

int run_audit(const AuditArgs& a) {
  DsdModel model = DsdModel::load(a.model);
  const AuditReport r = audit_invertibility(model, utf8_decode(a.chars), a.max_len, a.samples, a.seed);
  json out;
  out["checked"] = r.entries.size();
  out["all_invertible"] = r.all_invertible();
  out["max_condition"] = r.max_condition;
  out["singular"] = r.singular;
  const std::string text = out.dump(2) + "\n";
  if (a.out.empty())
    std::cout << text;
  else
    write_text(a.out, text);
  return 0;
}

struct RenderArgs {
  fs::path in, out;
  long index = -1;
  std::size_t columns = 1;
  RenderSpec spec;
};

int run_render(const RenderArgs& a) {
  auto samples = read_samples(a.in);
  if (a.index >= 0) {
    if (static_cast<std::size_t>(a.index) >= samples.size()) throw Error("--index out of range");
    write_text(a.out, render_svg(samples[static_cast<std::size_t>(a.index)], a.spec));
  } else if (samples.size() == 1) {
    write_text(a.out, render_svg(samples.front(), a.spec));
  } else {
    write_text(a.out, render_svg_grid(samples, a.columns, a.spec));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decoupled style descriptor handwriting toolkit"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  app.fallthrough();
  app.set_config("--config", "", "key = value file with one [subcommand] section each; flags override it");

  IngestArgs ia;
  auto* ingest = app.add_subcommand("ingest", "convert absolute stroke records to delta records");
  ingest->add_option("--in", ia.in, "records with writer_id, text, strokes [[[x,y],...],...]")->required();
  ingest->add_option("--out", ia.out)->required();
  ingest->add_option("--origin-x", ia.origin_x);
  ingest->add_option("--origin-y", ia.origin_y);
  ingest->add_flag("--reorder", ia.reorder, "move delayed strokes left to right");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth-data", "write a synthetic corpus");
  synth->add_option("--writers", sa.writers);
  synth->add_option("--words", sa.words, "first N words of the built-in list");
  synth->add_option("--word-list", sa.word_list)->delimiter(',');
  synth->add_option("--seed", sa.seed);
  synth->add_option("--out", sa.out)->required();

  SegmentArgs ga;
  auto* seg = app.add_subcommand("segment", "fit the character segmenter or label eoc");
  seg->add_option("--data", ga.data)->required();
  seg->add_flag("--fit", ga.fit);
  seg->add_option("--out", ga.out, "segmenter checkpoint directory (with --fit)");
  seg->add_option("--model", ga.model, "segmenter checkpoint to label with");
  seg->add_option("--labelled", ga.labelled, "output records with eoc");
  seg->add_option("--steps", ga.steps);
  seg->add_option("--batch", ga.batch);
  seg->add_option("--hidden", ga.hidden);
  seg->add_option("--layers", ga.layers);
  seg->add_option("--seed", ga.seed);

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train the DSD model");
  tr->add_option("--data", ta.data)->required();
  tr->add_option("--out", ta.out)->required();
  tr->add_option("--seed", ta.cfg.seed);
  tr->add_option("--steps", ta.cfg.steps);
  tr->add_option("--batch", ta.cfg.batch);
  tr->add_option("--latent", ta.cfg.latent);
  tr->add_option("--components", ta.cfg.components);
  tr->add_option("--lr", ta.cfg.learning_rate);
  tr->add_option("--clip", ta.cfg.clip);
  tr->add_option("--checkpoint-every", ta.cfg.checkpoint_every);
  tr->add_option("--log-every", ta.cfg.log_every);
  tr->add_option("--ablate", ta.ablate, "comma list of Lf_enc, Lalpha, Lbeta, wct_rec");
  tr->add_flag("--wall-time", ta.wall_time, "add elapsed seconds to the log");

  GenerateArgs gen;
  auto* ge = app.add_subcommand("generate", "write text in the style of reference samples");
  ge->add_option("--model", gen.model)->required();
  ge->add_option("--refs", gen.refs)->required();
  ge->add_option("--text", gen.text)->required();
  ge->add_option("--out", gen.out)->required();
  ge->add_option("--svg", gen.svg);
  ge->add_option("--writer", gen.writer, "use only this writer's references");
  ge->add_option("--seed", gen.seed);
  ge->add_option("--max-steps", gen.max_steps, "0 means 80 per character");
  ge->add_option("--temperature", gen.temperature);

  InterpArgs ip;
  auto* in = app.add_subcommand("interp", "interpolate writer, writer-character or character DSDs");
  in->add_option("--model", ip.model)->required();
  in->add_option("--level", ip.level)->check(CLI::IsMember({"w", "wct", "C"}));
  in->add_option("--a", ip.a)->required();
  in->add_option("--b", ip.b);
  in->add_option("--text", ip.text);
  in->add_option("--chars", ip.chars, "2 or 4 characters for --level C");
  in->add_option("--gamma", ip.gammas)->delimiter(',');
  in->add_option("--out", ip.out)->required();
  in->add_option("--svg", ip.svg);
  in->add_option("--seed", ip.seed);
  in->add_option("--max-steps", ip.max_steps);
  in->add_option("--temperature", ip.temperature);

  NewCharArgs na;
  auto* nc = app.add_subcommand("newchar", "estimate a character DSD from (w, w_new) pairs");
  nc->add_option("--pairs", na.pairs, "records {\"w\": [...], \"w_new\": [...]}")->required();
  nc->add_option("--mode", na.mode)->check(CLI::IsMember({"direct", "latent"}));
  nc->add_option("--model", na.model);
  nc->add_option("--out", na.out)->required();

  IdentifyArgs id;
  auto* ident = app.add_subcommand("identify", "nearest-codebook writer identification");
  ident->add_option("--model", id.model)->required();
  ident->add_option("--codebook", id.codebook, "enrollment samples")->required();
  ident->add_option("--queries", id.queries)->required();
  ident->add_option("--words", id.words, "query words per decision; 0 uses all of a writer's samples");
  ident->add_option("--out", id.out);

  AuditArgs au;
  auto* audit = app.add_subcommand("audit", "SVD rank test of character DSDs");
  audit->add_option("--model", au.model)->required();
  audit->add_option("--max-len", au.max_len);
  audit->add_option("--chars", au.chars);
  audit->add_option("--samples", au.samples, "strings per length above 2");
  audit->add_option("--seed", au.seed);
  audit->add_option("--out", au.out);

  RenderArgs ra;
  auto* rd = app.add_subcommand("render", "draw samples as SVG");
  rd->add_option("--in", ra.in)->required();
  rd->add_option("--out", ra.out)->required();
  rd->add_option("--index", ra.index);
  rd->add_option("--columns", ra.columns);
  rd->add_option("--width", ra.spec.width);
  rd->add_option("--height", ra.spec.height);
  rd->add_option("--baseline", ra.spec.baseline);
  rd->add_option("--stroke-width", ra.spec.stroke_width);
  rd->add_flag("--color-by-char", ra.spec.color_by_char);
  rd->add_flag("--baseline-guide", ra.spec.baseline_guide);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*ingest) return run_ingest(ia);
    if (*synth) return run_synth(sa);
    if (*seg) return run_segment(ga);
    if (*tr) return run_train(ta);
    if (*ge) return run_generate(gen);
    if (*in) return run_interp(ip);
    if (*nc) return run_newchar(na);
    if (*ident) return run_identify(id);
    if (*audit) return run_audit(au);
    if (*rd) return run_render(ra);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
