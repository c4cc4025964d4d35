#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "nrec/enrichment.hpp"
#include "test_util.hpp"

using namespace nrec;
using testutil::TempDir;

namespace {

NewsRecord article(std::string id, std::string title, std::vector<EntityMention> ents = {}) {
  NewsRecord r;
  r.news_id = std::move(id);
  r.category = "news";
  r.subcategory = "newsworld";
  r.title = std::move(title);
  r.abstract = "Some abstract text.";
  r.title_entities = std::move(ents);
  return r;
}

nlohmann::json hit(const std::string& qid, const std::string& label, std::vector<std::string> aliases = {}) {
  return {{"search", {{{"id", qid}, {"label", label}, {"aliases", aliases}}}}, {"success", 1}};
}

nlohmann::json us_fixture() {
  return {{"united states", hit("Q30", "United States", {"U.S.", "USA"})},
          {"us", hit("Q30", "United States", {"U.S.", "USA"})},
          {"paris", hit("Q90", "Paris")},
          {"trump", hit("Q22686", "Donald Trump", {"Trump"})},
          {"apple", hit("Q312", "Apple Inc.")}};
}

// Fails the first `failures` calls, then answers like the mock.
class FlakyLlm : public LlmClient {
 public:
  explicit FlakyLlm(int failures, bool blank = false) : failures_(failures), blank_(blank) {}
  std::string complete(const std::string& prompt, int, double) override {
    ++calls;
    if (calls <= failures_) {
      if (blank_) return "   \n";
      throw LlmError("simulated outage");
    }
    return MockLlmClient::respond(prompt, 0);
  }
  int calls = 0;

 private:
  int failures_;
  bool blank_;
};

class FixedLlm : public LlmClient {
 public:
  explicit FixedLlm(std::string answer) : answer_(std::move(answer)) {}
  std::string complete(const std::string&, int, double) override {
    ++calls;
    return answer_;
  }
  int calls = 0;

 private:
  std::string answer_;
};

class DownWikidata : public WikidataClient {
 public:
  std::string search(const std::string&) override { throw WikidataError("connection refused"); }
};

struct Harness {
  MockLlmClient llm{7};
  FixtureWikidataClient wiki{us_fixture()};
  EnrichmentCache cache;
  EnrichmentCounters counters;
  EnrichmentContext ctx{llm, wiki, cache, counters};
};

}  // namespace

TEST(MockLlm, TemplatesAndPurity) {
  const auto n = article("N1", "Obama visits Paris today");
  EXPECT_EQ(MockLlmClient::respond(prompts::direct(n), 1), "ENRICHED: Obama visits Paris today");
  EXPECT_EQ(MockLlmClient::respond(prompts::explore(n, 10), 1), "Obama\nParis\n");
  EXPECT_EQ(MockLlmClient::respond(prompts::refine(n, "cand", {"A", "B"}), 1), "REFINED: cand [A, B]");
  EXPECT_EQ(MockLlmClient::respond(prompts::direct(n), 3), MockLlmClient::respond(prompts::direct(n), 3));
}

TEST(MockLlm, CapitalisedRunsMerge) {
  EXPECT_EQ(MockLlmClient::capitalised_runs("A visits B"), (std::vector<std::string>{"A", "B"}));
  EXPECT_EQ(MockLlmClient::capitalised_runs("Prince Charles, Queen Elizabeth meet"),
            (std::vector<std::string>{"Prince Charles", "Queen Elizabeth"}));
  EXPECT_EQ(MockLlmClient::capitalised_runs("\"Apple\" beats (Google)!"), (std::vector<std::string>{"Apple", "Google"}));
  EXPECT_TRUE(MockLlmClient::capitalised_runs("all lowercase here").empty());
}

TEST(DirectPrompt, MockTemplateAndCache) {
  Harness h;
  const auto n = article("N1", "Markets rally");
  EXPECT_EQ(direct_prompt(n, h.ctx), "ENRICHED: Markets rally");
  EXPECT_EQ(h.llm.calls(), 1u);
  EXPECT_EQ(direct_prompt(n, h.ctx), "ENRICHED: Markets rally");
  EXPECT_EQ(h.llm.calls(), 1u);
  EXPECT_EQ(h.counters.cache_hits.load(), 1u);
}

TEST(DirectPrompt, ThreeFailuresFallBackToOriginal) {
  FlakyLlm llm(3);
  FixtureWikidataClient wiki(us_fixture());
  EnrichmentCache cache;
  EnrichmentCounters counters;
  EnrichmentContext ctx{llm, wiki, cache, counters};
  const auto n = article("N1", "Markets rally");
  EXPECT_EQ(direct_prompt(n, ctx), "Markets rally");
  EXPECT_EQ(llm.calls, 3);
  EXPECT_EQ(counters.fallbacks.load(), 1u);
  EXPECT_EQ(cache.size(), 0u);  // failures are not cached
}

TEST(DirectPrompt, BlankResponsesRetriedThenRecover) {
  FlakyLlm llm(2, true);
  FixtureWikidataClient wiki(us_fixture());
  EnrichmentCache cache;
  EnrichmentCounters counters;
  EnrichmentContext ctx{llm, wiki, cache, counters};
  EXPECT_EQ(direct_prompt(article("N1", "Markets rally"), ctx), "ENRICHED: Markets rally");
  EXPECT_EQ(llm.calls, 3);
  EXPECT_EQ(counters.fallbacks.load(), 0u);
}

TEST(DirectPrompt, MultiLineResponseKeepsFirstLine) {
  FixedLlm llm("  A better title  \nsecond line");
  FixtureWikidataClient wiki(us_fixture());
  EnrichmentCache cache;
  EnrichmentCounters counters;
  EnrichmentContext ctx{llm, wiki, cache, counters};
  EXPECT_EQ(direct_prompt(article("N1", "x"), ctx), "A better title");
}

TEST(ExploreEntities, MockExtractsCapitalisedTokens) {
  Harness h;
  const auto c = explore_entities(article("N1", "A visits B"), h.ctx);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].surface_name, "A");
  EXPECT_EQ(c[1].surface_name, "B");
  EXPECT_FALSE(c[0].verified);
}

TEST(ExploreEntities, DuplicatesAndBulletsAndLimit) {
  EXPECT_EQ(parse_entity_list("U.S.\nU.S.\n", 10).size(), 1u);
  EXPECT_EQ(parse_entity_list("Paris\nparis\nPARIS", 10).size(), 1u);
  const auto c = parse_entity_list("1. Alpha\n- Beta\n* Gamma\n2) Delta\n", 3);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[0].surface_name, "Alpha");
  EXPECT_EQ(c[1].surface_name, "Beta");
  EXPECT_EQ(c[2].surface_name, "Gamma");
}

TEST(ExploreEntities, EmptyResponse) {
  FixedLlm llm("");
  FixtureWikidataClient wiki(us_fixture());
  EnrichmentCache cache;
  EnrichmentCounters counters;
  EnrichmentContext ctx{llm, wiki, cache, counters};
  EXPECT_TRUE(explore_entities(article("N1", "x"), ctx).empty());
}

TEST(VerifyEntity, AliasesCollapseToOneQid) {
  Harness h;
  std::vector<EntityCandidate> c{{"U.S.", {}}, {"United States", {}}, {"zzqx", {}}};
  const auto out = verify_and_deduplicate(c, h.ctx);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].wikidata_id, "Q30");
  EXPECT_EQ(out[0].name, "United States");
  EXPECT_EQ(h.counters.dropped_entities.load(), 1u);
  EXPECT_EQ(h.counters.duplicate_entities.load(), 1u);
}

TEST(VerifyEntity, GibberishDropped) {
  Harness h;
  EXPECT_FALSE(verify_entity({"zzqx", {}}, h.ctx).verified);
}

TEST(VerifyEntity, LabelMismatchRejected) {
  // "Apple" hits "Apple Inc." with no alias "Apple": the conservative rule refuses it.
  Harness h;
  EXPECT_FALSE(verify_entity({"Apple", {}}, h.ctx).verified);
  auto t = verify_entity({"Trump", {}}, h.ctx);
  ASSERT_TRUE(t.verified);
  EXPECT_EQ(t.verified->wikidata_id, "Q22686");
  EXPECT_EQ(t.verified->canonical_name, "Donald Trump");
}

TEST(VerifyEntity, CachedNameSkipsApi) {
  Harness h;
  verify_entity({"Paris", {}}, h.ctx);
  EXPECT_EQ(h.wiki.calls(), 1u);
  auto again = verify_entity({"paris!", {}}, h.ctx);
  EXPECT_EQ(h.wiki.calls(), 1u);
  ASSERT_TRUE(again.verified);
  EXPECT_EQ(again.verified->wikidata_id, "Q90");
}

TEST(VerifyEntity, NetworkFailureDropsWithoutThrowing) {
  MockLlmClient llm;
  DownWikidata wiki;
  EnrichmentCache cache;
  EnrichmentCounters counters;
  EnrichmentContext ctx{llm, wiki, cache, counters};
  const auto out = verify_and_deduplicate({{"Paris", {}}}, ctx);
  EXPECT_TRUE(out.empty());
  EXPECT_EQ(counters.network_failures.load(), 1u);
  EXPECT_EQ(cache.size(), 0u);
}

TEST(VerifyEntity, NonQidHitRejected) {
  nlohmann::json fx{{"paris", hit("P31", "Paris")}};
  MockLlmClient llm;
  FixtureWikidataClient wiki(fx);
  EnrichmentCache cache;
  EnrichmentCounters counters;
  EnrichmentContext ctx{llm, wiki, cache, counters};
  EXPECT_FALSE(verify_entity({"Paris", {}}, ctx).verified);
}

TEST(Refine, MockTemplate) {
  Harness h;
  const auto n = article("N1", "Obama in Paris");
  EXPECT_EQ(hierarchical_refine("cand title", {{"Paris", "Q90"}, {"United States", "Q30"}}, n, h.ctx),
            "REFINED: cand title [Paris, United States]");
}

TEST(Refine, NoEntitiesStillIssuesPrompt) {
  Harness h;
  EXPECT_EQ(hierarchical_refine("cand", {}, article("N1", "x"), h.ctx), "REFINED: cand []");
  EXPECT_EQ(h.llm.calls(), 1u);
}

TEST(Refine, LongResponseTruncatedTo40) {
  std::string sixty;
  for (int i = 0; i < 60; ++i) sixty += "w" + std::to_string(i) + " ";
  FixedLlm llm(sixty);
  FixtureWikidataClient wiki(us_fixture());
  EnrichmentCache cache;
  EnrichmentCounters counters;
  EnrichmentContext ctx{llm, wiki, cache, counters};
  const auto t = hierarchical_refine("cand", {}, article("N1", "x"), ctx);
  EXPECT_EQ(tokenize(t).size(), 40u);
  EXPECT_EQ(tokenize(t).back(), "w39");
}

TEST(Refine, FailureFallsBackToCandidate) {
  FlakyLlm llm(3);
  FixtureWikidataClient wiki(us_fixture());
  EnrichmentCache cache;
  EnrichmentCounters counters;
  EnrichmentContext ctx{llm, wiki, cache, counters};
  EXPECT_EQ(hierarchical_refine("the candidate", {}, article("N1", "x"), ctx), "the candidate");
}

namespace {

std::vector<NewsRecord> three_articles() {
  EntityMention obama{"Barack Obama", "P", "Q76", 1.0, {0}, {"Obama"}};
  return {article("N1", "Obama visits Paris and the U.S. embassy", {obama}),
          article("N2", "United States markets rally as Trump speaks"),
          article("N3", "quiet day for weather")};
}

}  // namespace

TEST(EnrichCorpus, HierarchicalDeterministic) {
  const auto corpus = three_articles();
  Harness a, b;
  const auto ra = enrich_corpus(corpus, PromptingMode::hierarchical, a.ctx);
  const auto rb = enrich_corpus(corpus, PromptingMode::hierarchical, b.ctx);
  ASSERT_EQ(ra.size(), 3u);
  EXPECT_EQ(ra, rb);
  EXPECT_EQ(ra[0].enriched_title, "REFINED: ENRICHED: Obama visits Paris and the U.S. embassy [Paris, United States]");
  ASSERT_EQ(ra[0].enriched_entities.size(), 2u);
  EXPECT_EQ(ra[0].enriched_entities[0].wikidata_id, "Q90");
  EXPECT_EQ(ra[0].enriched_entities[1].wikidata_id, "Q30");
  EXPECT_EQ(ra[0].prompt_version, kPromptVersion);
  // "United States" and "Trump" both verify.
  ASSERT_EQ(ra[1].enriched_entities.size(), 2u);
  EXPECT_TRUE(ra[2].enriched_entities.empty());
}

TEST(EnrichCorpus, WarmCacheMakesNoCalls) {
  TempDir dir;
  const auto corpus = three_articles();
  std::vector<EnrichedNews> first;
  {
    MockLlmClient llm;
    FixtureWikidataClient wiki(us_fixture());
    EnrichmentCache cache(dir / "cache.jsonl");
    EnrichmentCounters counters;
    EnrichmentContext ctx{llm, wiki, cache, counters};
    first = enrich_corpus(corpus, PromptingMode::hierarchical, ctx);
    EXPECT_GT(llm.calls(), 0u);
  }
  MockLlmClient llm;
  FixtureWikidataClient wiki(us_fixture());
  EnrichmentCache cache(dir / "cache.jsonl");
  EnrichmentCounters counters;
  EnrichmentContext ctx{llm, wiki, cache, counters};
  EXPECT_EQ(enrich_corpus(corpus, PromptingMode::hierarchical, ctx), first);
  EXPECT_EQ(llm.calls(), 0u);
  EXPECT_EQ(wiki.calls(), 0u);
  EXPECT_EQ(counters.llm_calls.load() + counters.wikidata_calls.load(), 0u);
}

TEST(EnrichCorpus, CacheToleratesTornLastLine) {
  TempDir dir;
  {
    EnrichmentCache cache(dir / "c.jsonl");
    cache.put({"N1", "direct", "v"}, "hello");
  }
  {
    std::ofstream out(dir / "c.jsonl", std::ios::app);
    out << "{\"news_id\":\"N2\",\"st";
  }
  EnrichmentCache cache(dir / "c.jsonl");
  EXPECT_EQ(cache.get({"N1", "direct", "v"}), std::optional<std::string>("hello"));
  EXPECT_EQ(cache.size(), 1u);
}

TEST(EnrichCorpus, PromptVersionSeparatesCacheEntries) {
  Harness h;
  const auto corpus = three_articles();
  enrich_corpus(corpus, PromptingMode::direct, h.ctx);
  const auto calls = h.llm.calls();
  h.ctx.prompt_version = "other";
  enrich_corpus(corpus, PromptingMode::direct, h.ctx);
  EXPECT_EQ(h.llm.calls(), 2 * calls);
}

TEST(EnrichCorpus, DirectModeKeepsOriginalEntities) {
  Harness h;
  const auto corpus = three_articles();
  const auto r = enrich_corpus(corpus, PromptingMode::direct, h.ctx);
  ASSERT_EQ(r[0].enriched_entities.size(), 1u);
  EXPECT_EQ(r[0].enriched_entities[0].wikidata_id, "Q76");
  EXPECT_EQ(r[0].enriched_title, "ENRICHED: Obama visits Paris and the U.S. embassy");
  EXPECT_EQ(h.wiki.calls(), 0u);
}

TEST(EnrichCorpus, EntityModeAppendsNames) {
  Harness h;
  const auto r = enrich_corpus(three_articles(), PromptingMode::entity, h.ctx);
  EXPECT_EQ(r[0].enriched_title, "ENRICHED: Obama visits Paris and the U.S. embassy Paris United States");
}

TEST(EnrichCorpus, WorkerCountDoesNotChangeOutput) {
  std::vector<NewsRecord> corpus;
  for (int i = 0; i < 40; ++i)
    corpus.push_back(article("N" + std::to_string(i), "Story " + std::to_string(i) + " about Paris and United States"));
  Harness a, b;
  EXPECT_EQ(enrich_corpus(corpus, PromptingMode::hierarchical, a.ctx),
            enrich_corpus(corpus, PromptingMode::hierarchical, b.ctx, 8));
}

TEST(EnrichCorpus, InvariantsOnLongTitles) {
  std::string long_title;
  for (int i = 0; i < 55; ++i) long_title += "Word" + std::to_string(i) + " ";
  std::vector<NewsRecord> corpus{article("N1", long_title), article("N2", "U.S. and United States and US")};
  for (auto mode : {PromptingMode::direct, PromptingMode::entity, PromptingMode::hierarchical}) {
    Harness h;
    for (const auto& e : enrich_corpus(corpus, mode, h.ctx)) {
      const auto n = tokenize(e.enriched_title).size();
      EXPECT_GE(n, 1u);
      EXPECT_LE(n, kMaxTitleTokens);
      std::set<std::string> q;
      for (const auto& x : e.enriched_entities) EXPECT_TRUE(q.insert(x.wikidata_id).second);
    }
  }
}

TEST(EnrichedTsv, RoundTrip) {
  Harness h;
  const auto r = enrich_corpus(three_articles(), PromptingMode::hierarchical, h.ctx);
  std::stringstream ss;
  write_enriched_tsv(ss, r);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "NewsID\tEnrichedTitle\tEnrichedEntities\tPromptVersion");
  EXPECT_EQ(parse_enriched_tsv(ss), r);
}

TEST(EnrichedTsv, BadRowsAreErrors) {
  std::istringstream three_cols("NewsID\tEnrichedTitle\tEnrichedEntities\tPromptVersion\nN1\tt\t[]\n");
  EXPECT_THROW(parse_enriched_tsv(three_cols), InputError);
  std::istringstream bad_json("N1\tt\t{nope\tv\n");
  EXPECT_THROW(parse_enriched_tsv(bad_json), InputError);
  EXPECT_THROW(parse_enriched_tsv(std::filesystem::path("/nonexistent/e.tsv")), InputError);
}

TEST(PromptingMode, Parse) {
  EXPECT_EQ(prompting_mode_from_string("entity"), PromptingMode::entity);
  EXPECT_THROW(prompting_mode_from_string("topic"), ConfigError);
}
