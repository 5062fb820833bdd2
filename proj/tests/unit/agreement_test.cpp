#include "propbench/agreement.hpp"

#include "../support/reference.hpp"
#include "test_util.hpp"

#include <random>

using namespace propbench;

namespace {

const Cell N = std::nullopt;

LabelMatrix fixture_matrix(const std::string& name) {
  return LabelMatrix::load(testutil::source_dir() / "tests" / "fixtures" / name);
}

LabelMatrix random_matrix(std::mt19937& gen, std::size_t items, std::size_t annotators, std::size_t labels,
                          double missing) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<Cell>> rows(items, std::vector<Cell>(annotators));
  for (auto& row : rows)
    for (auto& c : row)
      if (u(gen) >= missing) c = std::string(1, static_cast<char>('a' + gen() % labels));
  return LabelMatrix::from_rows(rows);
}

} // namespace

TEST(RawAgreement, Quorum) {
  auto m = LabelMatrix::from_rows({{"x", "x", "y"}});
  EXPECT_EQ(raw_agreement(m, 2), 1.0);
  EXPECT_EQ(raw_agreement(m, 3), 0.0);
  EXPECT_THROW(raw_agreement(m, 0), QuorumRangeError);
  EXPECT_THROW(raw_agreement(m, 4), QuorumRangeError);
}

TEST(RawAgreement, Unanimous) {
  auto m = LabelMatrix::from_rows({{"x", "x", "x"}, {"y", "y", "y"}});
  for (std::size_t q = 1; q <= 3; ++q) EXPECT_EQ(raw_agreement(m, q), 1.0);
}

TEST(RawAgreement, MissingNeverCountsAndAllMissingExcluded) {
  auto m = LabelMatrix::from_rows({{"x", N, N}, {N, N, N}, {"y", "y", N}});
  EXPECT_DOUBLE_EQ(raw_agreement(m, 2), 0.5);
}

TEST(RawAgreement, EightItemFixture) {
  std::vector<std::vector<Cell>> rows{{"a", "a", "a"}, {"a", "b", "a"}, {"a", "b", "c"}, {"b", "b", N},
                                      {"c", N, N},     {"c", "c", "c"}, {N, "a", "b"},   {"b", "a", "b"}};
  auto m = LabelMatrix::from_rows(rows);
  // Quorum 2: items 1,2,4,6,8. Quorum 3: items 1,6.
  EXPECT_DOUBLE_EQ(raw_agreement(m, 2), 5.0 / 8.0);
  EXPECT_DOUBLE_EQ(raw_agreement(m, 3), 2.0 / 8.0);
}

TEST(RawAgreement, PermutationInvariant) {
  std::mt19937 gen(3);
  for (int t = 0; t < 100; ++t) {
    auto m = random_matrix(gen, 8, 3, 3, 0.2);
    auto p = m;
    std::shuffle(p.cells.begin(), p.cells.end(), gen);
    for (auto& row : p.cells) std::swap(row[0], row[2]);
    for (std::size_t q = 1; q <= 3; ++q) EXPECT_DOUBLE_EQ(raw_agreement(m, q), raw_agreement(p, q));
  }
}

TEST(KrippendorffAlpha, AllAgree) {
  EXPECT_EQ(krippendorff_alpha(LabelMatrix::from_rows({{"x", "x"}, {"y", "y"}})), 1.0);
  EXPECT_EQ(krippendorff_alpha(LabelMatrix::from_rows({{"x", "x", N}, {"x", "x", "x"}})), 1.0);
}

TEST(KrippendorffAlpha, TwoByTwoSwap) {
  EXPECT_NEAR(krippendorff_alpha(LabelMatrix::from_rows({{"x", "y"}, {"y", "x"}})), -0.5, 1e-12);
}

TEST(KrippendorffAlpha, TenByThreeReference) {
  // Reference value from tests/oracles/agreement_reference.py.
  std::vector<std::vector<Cell>> rows{{"a", "a", "b"}, {"b", "b", "b"}, {"c", N, "c"}, {"a", "b", "c"}, {N, N, "a"},
                                      {"b", "a", N},   {"c", "c", "a"}, {"a", "a", "a"}, {N, "b", "b"}, {"c", "b", "b"}};
  EXPECT_NEAR(krippendorff_alpha(LabelMatrix::from_rows(rows)), 0.3271276595744681, 1e-9);
}

TEST(KrippendorffAlpha, NoPairableValues) {
  EXPECT_THROW(krippendorff_alpha(LabelMatrix::from_rows({{"x", N}, {N, "y"}})), NoPairableValuesError);
}

TEST(KrippendorffAlpha, MatchesPairwiseReferenceOnRandomMatrices) {
  std::mt19937 gen(17);
  int checked = 0;
  for (int t = 0; t < 500; ++t) {
    auto m = random_matrix(gen, 1 + gen() % 10, 2 + gen() % 3, 2 + gen() % 3, 0.25);
    std::vector<reference::Row> rows(m.cells.begin(), m.cells.end());
    double expected;
    try {
      expected = reference::alpha_pairwise(rows);
    } catch (...) {
      continue;
    }
    bool pairable = false;
    for (const auto& r : m.cells) pairable = pairable || detail::present(r) >= 2;
    if (!pairable) {
      EXPECT_THROW(krippendorff_alpha(m), NoPairableValuesError);
      continue;
    }
    EXPECT_NEAR(krippendorff_alpha(m), expected, 1e-9);
    ++checked;
  }
  EXPECT_GT(checked, 300);
}

TEST(KrippendorffAlpha, RelabelingInvariant) {
  std::mt19937 gen(23);
  for (int t = 0; t < 100; ++t) {
    auto m = random_matrix(gen, 6, 3, 3, 0.1);
    auto r = m;
    for (auto& row : r.cells)
      for (auto& c : row)
        if (c) c = *c == "a" ? "zz" : *c == "b" ? "a" : "b";
    try {
      EXPECT_NEAR(krippendorff_alpha(m), krippendorff_alpha(r), 1e-12);
    } catch (const NoPairableValuesError&) {
    }
  }
}

// Duplicating every unit doubles the pairable count n while Do stays put;
// De picks up a factor n(n-1)/(2n(2n-1)) * 4, so the coefficients differ by
// alpha_dup = 1 - (1 - alpha)(2n - 1) / (2(n - 1)).
TEST(KrippendorffAlpha, DuplicatedUnits) {
  std::mt19937 gen(29);
  for (int t = 0; t < 100; ++t) {
    auto m = random_matrix(gen, 6, 3, 3, 0.0);
    auto dup = m;
    dup.cells.insert(dup.cells.end(), m.cells.begin(), m.cells.end());
    dup.item_ids.insert(dup.item_ids.end(), m.item_ids.begin(), m.item_ids.end());
    const double n = 18.0;
    const double a = krippendorff_alpha(m);
    EXPECT_NEAR(krippendorff_alpha(dup), 1.0 - (1.0 - a) * (2.0 * n - 1.0) / (2.0 * (n - 1.0)), 1e-12);
  }
}

TEST(AgreementReport, FieldsAndJson) {
  auto r = agreement_report(fixture_matrix("agreement12_coarse.csv"));
  EXPECT_DOUBLE_EQ(r.raw_quorum.at(2), 10.0 / 11.0);
  EXPECT_DOUBLE_EQ(r.raw_quorum.at(3), 5.0 / 11.0);
  auto j = r.to_json(3);
  EXPECT_TRUE(j["raw_quorum"].contains("2/3"));
  EXPECT_TRUE(j.contains("alpha"));
}

TEST(ConditionalAgreement, TwelveItemFixture) {
  auto expected = read_json_file(testutil::source_dir() / "tests" / "fixtures" / "agreement12_expected.json");
  auto coarse = fixture_matrix("agreement12_coarse.csv"), fine = fixture_matrix("agreement12_fine.csv");
  EXPECT_DOUBLE_EQ(raw_agreement(fine, 2), expected["raw_fine"]["2"].get<double>());
  EXPECT_DOUBLE_EQ(raw_agreement(fine, 3), expected["raw_fine"]["3"].get<double>());
  for (auto [mode, key] : {std::pair{CoarseSubsetMode::exactly, "conditional_exactly"},
                           std::pair{CoarseSubsetMode::at_least, "conditional_at_least"}}) {
    auto t = conditional_agreement(coarse, fine, mode);
    for (std::size_t r = 0; r < 2; ++r) {
      EXPECT_EQ(t.subset_sizes[r], expected[key]["items"][r].get<std::size_t>());
      for (std::size_t c = 0; c < 2; ++c) EXPECT_DOUBLE_EQ(t.cell(r, c), expected[key]["cells"][r][c].get<double>());
    }
  }
}

TEST(ConditionalAgreement, UnanimousAndMixed) {
  auto all = LabelMatrix::from_rows({{"A", "A", "A"}});
  auto allf = LabelMatrix::from_rows({{"x", "x", "x"}});
  auto t = conditional_agreement(all, allf, CoarseSubsetMode::at_least);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(t.cell(r, c), 1.0);

  auto m = conditional_agreement(LabelMatrix::from_rows({{"A", "A", "B"}}), LabelMatrix::from_rows({{"x", "y", "z"}}));
  EXPECT_EQ(m.subset_sizes[0], 1u);
  EXPECT_EQ(m.counts[0][0], 0u);
  EXPECT_EQ(m.counts[0][1], 0u);
}

TEST(ConditionalAgreement, ShapeErrors) {
  auto a = LabelMatrix::from_rows({{"A", "A", "A"}});
  auto b = LabelMatrix::from_rows({{"x", "x"}});
  EXPECT_THROW(conditional_agreement(a, b), ShapeMismatchError);
  EXPECT_THROW(conditional_agreement(b, b), ShapeMismatchError);
}

TEST(ConditionalAgreement, CellOrderingProperty) {
  std::mt19937 gen(31);
  for (int t = 0; t < 300; ++t) {
    auto c = random_matrix(gen, 12, 3, 2, 0.1);
    auto f = random_matrix(gen, 12, 3, 4, 0.1);
    auto tab = conditional_agreement(c, f);
    EXPECT_GE(tab.cell(1, 0), tab.cell(1, 1));
    EXPECT_GE(raw_agreement(c, 2), raw_agreement(c, 3));
  }
}

TEST(LabelMatrix, CsvRoundTripAndValidation) {
  auto m = fixture_matrix("agreement12_coarse.csv");
  EXPECT_EQ(m.items(), 12u);
  EXPECT_EQ(m.annotators(), 3u);
  EXPECT_FALSE(m.cells[8][2]);
  auto back = LabelMatrix::from_csv(csv::parse(m.to_csv()));
  EXPECT_EQ(back.cells, m.cells);
  m.label_set = {"A", "B"};
  EXPECT_THROW(m.validate(), UnknownLabelError);
  EXPECT_THROW(LabelMatrix::from_csv(csv::parse("id,a,b\n1,x,y\n")), ParseError);
}

TEST(CohenKappa, Basics) {
  std::vector<std::string> a{"x", "y", "x", "z"};
  EXPECT_EQ(cohen_kappa(a, a).kappa, 1.0);
  auto ind = cohen_kappa({"x", "x", "y", "y"}, {"x", "y", "x", "y"});
  EXPECT_NEAR(ind.kappa, 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(ind.observed_agreement, 0.5);
  EXPECT_DOUBLE_EQ(ind.expected_agreement, 0.5);
  EXPECT_EQ(cohen_kappa({"x", "x"}, {"x", "x"}).kappa, 1.0);
  EXPECT_THROW(cohen_kappa({"x"}, {"x", "y"}), LengthMismatchError);
  EXPECT_THROW(cohen_kappa({}, {}), EmptyInputError);
}

TEST(CohenKappa, SixteenItemReference) {
  auto split = [](const std::string& s) {
    std::vector<std::string> v;
    for (char c : s) v.emplace_back(1, c);
    return v;
  };
  // Reference value from tests/oracles/agreement_reference.py (sklearn).
  EXPECT_NEAR(cohen_kappa(split("xxxyyzzzxyxzzyxx"), split("xxyyyzzxxyxzyyxz")).kappa, 0.6235294117647059, 1e-12);
}

TEST(CohenKappa, MatchesConfusionMatrixReferenceAndIsSymmetric) {
  std::mt19937 gen(37);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 1 + gen() % 50, k = 1 + gen() % 4;
    std::vector<std::string> a, b;
    for (std::size_t i = 0; i < n; ++i) {
      a.emplace_back(1, static_cast<char>('a' + gen() % k));
      b.emplace_back(1, static_cast<char>('a' + gen() % k));
    }
    EXPECT_NEAR(cohen_kappa(a, b).kappa, reference::kappa_confusion(a, b), 1e-9);
    EXPECT_NEAR(cohen_kappa(a, b).kappa, cohen_kappa(b, a).kappa, 1e-15);
  }
}

TEST(MajorityWithFallback, Rules) {
  auto m = LabelMatrix::from_rows({{"x", "x", "y"}, {"x", "y", "z"}});
  auto r = majority_with_fallback(m, {{"item1", "q"}, {"item2", "w"}}, 42);
  EXPECT_EQ(r.labels, (std::vector<std::string>{"x", "w"}));
  EXPECT_EQ(r.fallback_used, (std::vector<bool>{false, true}));
  EXPECT_EQ(r.to_json(m.item_ids)["seed"], 42);
  EXPECT_THROW(majority_with_fallback(m, {{"item1", "q"}}, 0), ItemSetMismatchError);
}

TEST(MajorityWithFallback, TenItemFixture) {
  std::vector<std::vector<Cell>> rows{{"a", "a", "a"}, {"a", "a", "b"}, {"a", "b", "c"}, {"b", "b", N}, {"c", N, N},
                                      {N, N, N},       {"c", "b", "c"}, {"a", "b", N},   {"b", "c", "a"}, {"c", "c", "c"}};
  auto m = LabelMatrix::from_rows(rows);
  std::map<std::string, std::string> llm;
  for (std::size_t i = 0; i < m.items(); ++i) llm[m.item_ids[i]] = "L" + std::to_string(i + 1);
  auto r = majority_with_fallback(m, llm, 1);
  EXPECT_EQ(r.labels, (std::vector<std::string>{"a", "a", "L3", "b", "L5", "L6", "c", "L8", "L9", "c"}));
}

TEST(MajorityWithFallback, RandomRunIsSeededChoiceAmongRuns) {
  auto m = LabelMatrix::from_rows({{"x", "y", "z"}});
  std::map<std::string, std::vector<std::string>> runs{{"item1", {"p", "q", "r", "s"}}};
  auto a = majority_with_fallback(m, {{"item1", "p"}}, 9, FallbackMode::random_run, runs);
  auto b = majority_with_fallback(m, {{"item1", "p"}}, 9, FallbackMode::random_run, runs);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_TRUE(a.labels[0] == "p" || a.labels[0] == "q" || a.labels[0] == "r" || a.labels[0] == "s");
  std::set<std::string> seen;
  for (std::uint64_t s = 0; s < 64; ++s)
    seen.insert(majority_with_fallback(m, {{"item1", "p"}}, s, FallbackMode::random_run, runs).labels[0]);
  EXPECT_EQ(seen.size(), 4u);
}
