#pragma once

#include "nrec/evaluation.hpp"
#include "nrec/synthetic.hpp"
#include "nrec/trainer.hpp"
#include "test_util.hpp"

namespace testutil {

// Synthetic corpus written to disk and featurised, ready for a model.
struct SyntheticSetup {
  TempDir dir;
  nrec::SyntheticCorpus corpus;
  nrec::FeatureConfig features;
  nrec::FeatureSpace space;
  nrec::NewsFeatureTable table;

  explicit SyntheticSetup(const nrec::SyntheticConfig& sc, nrec::FeatureConfig fc = {}) : features(fc) {
    corpus = nrec::generate_synthetic(sc);
    nrec::write_synthetic(corpus, dir.path());
    space = nrec::FeatureSpace::build(corpus.news, {}, features);
    table = nrec::featurize_corpus(corpus.news, {}, space);
  }

  std::unique_ptr<nrec::NewsRecModel> model(const nrec::ModelConfig& mc, std::uint64_t seed = 1) const {
    auto m = std::make_unique<nrec::NewsRecModel>(mc, nrec::ModelShape::of(space), seed);
    m->set_word_embeddings(nrec::load_word_embeddings(dir / "glove.txt", space.words, seed));
    if (mc.entity_dim == corpus.entity_vectors.front().second.size())
      m->set_entity_embeddings(nrec::load_entity_embeddings(dir / "entity_embedding.vec", space.entities, seed));
    return m;
  }

  std::vector<nrec::TrainingExample> examples(std::size_t k, std::uint64_t seed = 1) const {
    return nrec::make_training_examples(corpus.impressions, table, k, seed, features);
  }

  nrec::MetricReport evaluate(nrec::NewsRecModel& m, std::span<const nrec::Impression> imps) const {
    nrec::ModelScorer s(m, table, features.max_history);
    return nrec::evaluate(imps, std::cref(s)).report;
  }
};

inline nrec::ModelConfig tiny_model(std::size_t word_dim) {
  nrec::ModelConfig c;
  c.word_dim = word_dim;
  c.entity_dim = 100;
  c.category_dim = 16;
  c.n_filters = 32;
  c.att_dim = 16;
  c.heads = 4;
  return c;
}

}  // namespace testutil
