// Trains a small model on synthetic writers, then writes one word per writer
// into an SVG grid: the reference sample on the left, the generated word on the right.
//
//   demo_style_grid [steps=300] [word=thin] [out=style_grid.svg]

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "dsd/dsd.hpp"

using namespace dsd;

int main(int argc, char** argv) {
  const std::size_t steps = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 300;
  const std::string word = argc > 2 ? argv[2] : "thin";
  const std::string out = argc > 3 ? argv[3] : "style_grid.svg";

  const auto styles = random_styles(4, 3);
  const std::vector<std::string> words(default_words().begin(), default_words().begin() + 30);
  const auto data = synth_corpus(styles, words, 5);

  DsdConfig mc;
  mc.latent = 32;
  mc.components = 5;
  DsdModel model(mc, 1);
  model.set_delta_scale(corpus_delta_scale(data));
  TrainConfig cfg;
  cfg.steps = steps;
  cfg.latent = mc.latent;
  cfg.components = mc.components;
  train(model, data, cfg, {}, [&](std::size_t step, const LossBreakdown& lb) {
    if (step % 50 == 0) std::cerr << "step " << step << " loss " << lb.total << '\n';
  });

  std::vector<StrokeSequence> cells;
  std::mt19937_64 rng(11);
  for (std::size_t w = 0; w < styles.size(); ++w) {
    std::vector<StrokeSequence> refs;
    for (const auto& s : data)
      if (s.writer_id == data[w * words.size()].writer_id) refs.push_back(s);
    const auto db = build_database(model, refs);
    auto res = model.decode_strokes(sample_wcts(model, db, word), rng, 80 * word.size(), 0.5);
    cells.push_back(refs.front());
    cells.push_back(std::move(res.sequence));
  }
  std::ofstream(out) << render_svg_grid(cells, 2);
  std::cerr << "wrote " << out << '\n';
}
