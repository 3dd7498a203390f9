#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "xmlt/eval.hpp"
#include "xmlt/rng.hpp"
#include "support.hpp"

using namespace xmlt;

TEST_CASE("topk spot values") {
  CHECK(topk_accuracy({{2, 1}, {0, 3}}, {0, 1}, 1) == 1.0);
  CHECK(topk_accuracy({{2, 1}, {0, 3}}, {1, 0}, 2) == 1.0);  // k = num_classes
  CHECK(topk_accuracy({{1, 1}}, {1}, 1) == 0.0);             // tie goes to class 0
  CHECK(topk_accuracy({{1, 1}}, {0}, 1) == 1.0);
  CHECK_THROWS_AS(topk_accuracy({{1, 0}}, {0, 1}, 1), Error);
  CHECK_THROWS_AS(topk_accuracy({{1, 0}}, {0}, 3), Error);
}

TEST_CASE("topk is monotone in k") {
  Rng rng(91);
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  for (int i = 0; i < 200; ++i) {
    rows.push_back(testing::random_vector(rng, 7, -2.0, 2.0));
    labels.push_back(static_cast<int>(rng.next_below(7)));
  }
  double previous = 0.0;
  for (int k = 1; k <= 7; ++k) {
    const double acc = topk_accuracy(rows, labels, k);
    CHECK(acc >= previous);
    previous = acc;
  }
  CHECK(previous == 1.0);
}

TEST_CASE("group assignment reproduces the thresholds") {
  const auto groups = assign_groups({71, 70, 15, 14});
  REQUIRE(groups.size() == 4);
  CHECK(groups[0] == ClassGroup::Head);
  CHECK(groups[1] == ClassGroup::Medium);
  CHECK(groups[2] == ClassGroup::Medium);
  CHECK(groups[3] == ClassGroup::Tail);
  for (ClassGroup g : assign_groups({100, 100, 100})) CHECK(g == ClassGroup::Head);
  CHECK(assign_groups({0})[0] == ClassGroup::Tail);
}

TEST_CASE("group accuracy aggregates within groups") {
  // single head class, all correct
  GroupAccuracy single = group_accuracy({5}, {5}, {ClassGroup::Head});
  REQUIRE(single.head.has_value());
  CHECK(*single.head == 1.0);
  CHECK_FALSE(single.medium.has_value());
  CHECK_FALSE(single.tail.has_value());

  // two tail classes with accuracies 0 and 1, equal test counts
  GroupAccuracy tails = group_accuracy({0, 4}, {4, 4}, {ClassGroup::Tail, ClassGroup::Tail});
  REQUIRE(tails.tail.has_value());
  CHECK(*tails.tail == Catch::Approx(0.5).margin(1e-15));

  // uniform per-class accuracy on a balanced test set hits every group equally
  GroupAccuracy uniform = group_accuracy({3, 3, 3}, {4, 4, 4},
                                         {ClassGroup::Head, ClassGroup::Medium,
                                          ClassGroup::Tail});
  CHECK(*uniform.head == Catch::Approx(0.75));
  CHECK(*uniform.medium == Catch::Approx(0.75));
  CHECK(*uniform.tail == Catch::Approx(0.75));
}

TEST_CASE("class-mean group accuracy averages per-class accuracies") {
  // tail classes 0 and 1 with totals 1 and 9: sample-weighted 0.9, class-mean 0.5
  GroupAccuracy weighted = group_accuracy({0, 9}, {1, 9}, {ClassGroup::Tail, ClassGroup::Tail},
                                          GroupAccuracyMode::SampleWeighted);
  GroupAccuracy mean = group_accuracy({0, 9}, {1, 9}, {ClassGroup::Tail, ClassGroup::Tail},
                                      GroupAccuracyMode::ClassMean);
  CHECK(*weighted.tail == Catch::Approx(0.9));
  CHECK(*mean.tail == Catch::Approx(0.5));
}

TEST_CASE("nine group matrix partitions the classes") {
  const std::vector<int> source_counts{100, 100, 5, 40};
  const std::vector<int> target_counts{100, 5, 100, 40};
  const std::vector<long long> correct{8, 6, 4, 2};
  const std::vector<long long> totals{10, 10, 10, 10};
  const NineGroupMatrix m = nine_group_matrix(source_counts, target_counts, correct, totals);
  // class 1: source 100 -> Head row, target 5 -> Tail column
  REQUIRE(m[0][2].has_value());
  CHECK(*m[0][2] == Catch::Approx(0.6));
  REQUIRE(m[0][0].has_value());
  CHECK(*m[0][0] == Catch::Approx(0.8));
  REQUIRE(m[2][0].has_value());
  CHECK(*m[2][0] == Catch::Approx(0.4));
  REQUIRE(m[1][1].has_value());
  CHECK(*m[1][1] == Catch::Approx(0.2));
  int defined = 0;
  long long mass = 0;
  for (const auto& row : m)
    for (const auto& cell : row)
      if (cell) ++defined;
  CHECK(defined == 4);  // all other cells stay null
  (void)mass;
}

TEST_CASE("all-head classes populate only the head-head cell") {
  const NineGroupMatrix m =
      nine_group_matrix({100, 90}, {80, 75}, {1, 1}, {2, 2});
  REQUIRE(m[0][0].has_value());
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c)
      if (r != 0 || c != 0) CHECK_FALSE(m[r][c].has_value());
}

TEST_CASE("overall top1 decomposes into group and nine-group aggregates") {
  Rng rng(95);
  const int num_classes = 12;
  std::vector<int> source_counts, target_counts;
  std::vector<long long> correct, totals;
  long long total_correct = 0, total_samples = 0;
  for (int c = 0; c < num_classes; ++c) {
    source_counts.push_back(static_cast<int>(rng.next_below(150)));
    target_counts.push_back(static_cast<int>(rng.next_below(150)));
    const long long t = 1 + static_cast<long long>(rng.next_below(30));
    const long long k = static_cast<long long>(rng.next_below(static_cast<std::uint64_t>(t + 1)));
    totals.push_back(t);
    correct.push_back(k);
    total_correct += k;
    total_samples += t;
  }
  const double overall =
      static_cast<double>(total_correct) / static_cast<double>(total_samples);

  const auto groups = assign_groups(target_counts);
  const GroupAccuracy ga = group_accuracy(correct, totals, groups);
  double recomposed = 0.0;
  for (ClassGroup g : {ClassGroup::Head, ClassGroup::Medium, ClassGroup::Tail}) {
    long long group_total = 0;
    for (int c = 0; c < num_classes; ++c)
      if (groups[static_cast<std::size_t>(c)] == g) group_total += totals[static_cast<std::size_t>(c)];
    if (group_total == 0) continue;
    const GroupAccuracy copy = ga;
    const std::optional<double> acc = g == ClassGroup::Head  ? copy.head
                                      : g == ClassGroup::Medium ? copy.medium
                                                                : copy.tail;
    REQUIRE(acc.has_value());
    recomposed += *acc * static_cast<double>(group_total) / static_cast<double>(total_samples);
  }
  CHECK(std::abs(recomposed - overall) < 1e-12);

  const NineGroupMatrix m =
      nine_group_matrix(source_counts, target_counts, correct, totals);
  const auto src_groups = assign_groups(source_counts);
  double nine_recomposed = 0.0;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t col = 0; col < 3; ++col) {
      if (!m[r][col]) continue;
      long long cell_total = 0;
      for (int c = 0; c < num_classes; ++c)
        if (static_cast<std::size_t>(src_groups[static_cast<std::size_t>(c)]) == r &&
            static_cast<std::size_t>(groups[static_cast<std::size_t>(c)]) == col)
          cell_total += totals[static_cast<std::size_t>(c)];
      nine_recomposed +=
          *m[r][col] * static_cast<double>(cell_total) / static_cast<double>(total_samples);
    }
  CHECK(std::abs(nine_recomposed - overall) < 1e-12);
}

namespace {

EmbeddingVector planar(double angle) { return {std::cos(angle), std::sin(angle), 0.0}; }

}  // namespace

TEST_CASE("domain gap spot values") {
  // identical embeddings across domains
  std::vector<EmbeddingVector> embs = {planar(0.1), planar(0.1), planar(2.0), planar(2.0)};
  std::vector<int> labels = {0, 0, 1, 1};
  std::vector<DomainTag> domains = {DomainTag::Source, DomainTag::Target, DomainTag::Source,
                                    DomainTag::Target};
  CHECK(domain_gap(embs, labels, domains, 2) == Catch::Approx(0.0).margin(1e-12));

  // two classes with cosine gaps 0.2 and 0.4 -> mean 0.3
  const double gap_a = std::acos(0.8);
  const double gap_b = std::acos(0.6);
  embs = {planar(0.0), planar(gap_a), planar(1.0), planar(1.0 + gap_b)};
  CHECK(domain_gap(embs, labels, domains, 2) == Catch::Approx(0.3).margin(1e-12));

  // antipodal centroids contribute the maximum distance of 2
  embs = {planar(0.0), planar(std::numbers::pi)};
  CHECK(domain_gap(embs, {0, 0}, {DomainTag::Source, DomainTag::Target}, 1) ==
        Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("domain gap skips one-sided classes and can be undefined") {
  std::vector<EmbeddingVector> embs = {planar(0.0), planar(0.5), planar(1.0)};
  std::vector<int> labels = {0, 0, 1};
  std::vector<DomainTag> domains = {DomainTag::Source, DomainTag::Target, DomainTag::Source};
  // class 1 has no target samples; only class 0 counts
  CHECK(domain_gap(embs, labels, domains, 2) ==
        Catch::Approx(1.0 - std::cos(0.5)).margin(1e-12));
  CHECK_THROWS_MATCHES(
      domain_gap({planar(0.0)}, {0}, {DomainTag::Source}, 1), Error,
      Catch::Matchers::Predicate<Error>(
          [](const Error& e) { return e.code() == ErrorCode::Undefined; }));
}

TEST_CASE("domain gap is rotation invariant") {
  Rng rng(97);
  std::vector<EmbeddingVector> embs;
  std::vector<int> labels;
  std::vector<DomainTag> domains;
  const int dim = 6;
  for (int i = 0; i < 40; ++i) {
    embs.push_back(rng.next_unit_vector(dim));
    labels.push_back(static_cast<int>(rng.next_below(3)));
    domains.push_back(i % 2 == 0 ? DomainTag::Source : DomainTag::Target);
  }
  const double reference = domain_gap(embs, labels, domains, 3);

  // random global rotation from Givens planes
  std::vector<EmbeddingVector> rotated = embs;
  for (int k = 0; k < 10; ++k) {
    const int i = static_cast<int>(rng.next_below(dim));
    int j = static_cast<int>(rng.next_below(dim - 1));
    if (j >= i) ++j;
    const double angle = rng.next_uniform(0.0, 2.0 * std::numbers::pi);
    const double c = std::cos(angle), s = std::sin(angle);
    for (auto& v : rotated) {
      const double vi = v[static_cast<std::size_t>(i)], vj = v[static_cast<std::size_t>(j)];
      v[static_cast<std::size_t>(i)] = c * vi - s * vj;
      v[static_cast<std::size_t>(j)] = s * vi + c * vj;
    }
  }
  CHECK(domain_gap(rotated, labels, domains, 3) == Catch::Approx(reference).margin(1e-9));
}

TEST_CASE("jacobi pca recovers a known covariance structure") {
  // points spread along (1,1)/sqrt(2) with minor variance along (1,-1)
  Rng rng(99);
  std::vector<EmbeddingVector> rows;
  for (int i = 0; i < 4000; ++i) {
    const double major = 3.0 * rng.next_gaussian();
    const double minor = 0.5 * rng.next_gaussian();
    rows.push_back({(major + minor) / std::numbers::sqrt2,
                    (major - minor) / std::numbers::sqrt2});
  }
  const Pca2d pca = fit_pca2d(rows);
  CHECK(pca.eigenvalues[0] >= pca.eigenvalues[1]);
  CHECK(pca.eigenvalues[0] == Catch::Approx(9.0).epsilon(0.1));
  CHECK(pca.eigenvalues[1] == Catch::Approx(0.25).epsilon(0.15));
  // first component is (1,1)/sqrt(2) up to sign fixing (positive by rule)
  CHECK(std::abs(pca.components[0][0] - pca.components[0][1]) < 0.05);
  CHECK(pca.components[0][0] > 0.0);
  CHECK(norm(pca.components[0]) == Catch::Approx(1.0).margin(1e-9));
  CHECK(std::abs(dot(pca.components[0], pca.components[1])) < 1e-9);
}

TEST_CASE("evaluate produces a coherent report on a synthetic model") {
  Rng rng(103);
  const int num_classes = 4;
  ModelParams params = init_params(6, 5, 4, num_classes, rng.split(0));
  Dataset test;
  test.num_classes = num_classes;
  test.feature_dim = 6;
  test.text_dim = 5;
  for (int i = 0; i < 40; ++i) {
    Sample s;
    s.id = static_cast<std::uint64_t>(i);
    s.label = i % num_classes;
    s.domain = DomainTag::Target;
    s.image_feature = testing::random_vector(rng, 6);
    s.title_feature = testing::random_vector(rng, 5);
    test.samples.push_back(std::move(s));
  }
  const std::vector<int> src_counts{100, 50, 10, 3};
  const std::vector<int> tgt_counts{80, 40, 12, 2};
  const MetricsReport report = evaluate(params, test, src_counts, tgt_counts);
  CHECK(report.top1_all >= 0.0);
  CHECK(report.top1_all <= 1.0);
  CHECK(report.top5_all >= report.top1_all);

  // overall equals the test-count-weighted mean of the group accuracies
  const auto groups = assign_groups(tgt_counts);
  double recomposed = 0.0;
  const std::vector<std::optional<double>> accs{report.group_top1.head,
                                                report.group_top1.medium,
                                                report.group_top1.tail};
  for (ClassGroup g : {ClassGroup::Head, ClassGroup::Medium, ClassGroup::Tail}) {
    long long group_total = 0;
    for (int c = 0; c < num_classes; ++c)
      if (groups[static_cast<std::size_t>(c)] == g) group_total += 10;
    const auto& acc = accs[static_cast<std::size_t>(g)];
    if (group_total > 0) {
      REQUIRE(acc.has_value());
      recomposed += *acc * static_cast<double>(group_total) / 40.0;
    }
  }
  CHECK(std::abs(recomposed - report.top1_all) < 1e-12);
  CHECK_THROWS_AS(evaluate(params, Dataset{}, src_counts, tgt_counts), Error);
}

TEST_CASE("image-only inference ignores the text features") {
  Rng rng(105);
  ModelParams params = init_params(4, 4, 3, 3, rng.split(0));
  params.use_title = true;
  params.use_ingredients = true;
  Sample s;
  s.label = 0;
  s.image_feature = testing::random_vector(rng, 4);
  s.title_feature = testing::random_vector(rng, 4);
  s.ingredient_features = {testing::random_vector(rng, 4)};
  const std::vector<double> with_text = inference_logits(params, s, false);
  const std::vector<double> image_only = inference_logits(params, s, true);
  Sample blank = s;
  blank.title_feature.assign(4, 0.0);
  blank.ingredient_features.clear();
  CHECK(image_only != with_text);
  // image-only logits equal classifying the bare image embedding
  const std::vector<double> direct =
      classify(params, encode_image(params, s.image_feature));
  CHECK(image_only == direct);
}
