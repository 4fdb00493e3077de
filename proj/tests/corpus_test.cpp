/* Copyright 2026 The DDB Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <tuple>

#include "ddb/corpus.hpp"
#include "ddb/errors.hpp"
#include "ddb/eval.hpp"
#include "ddb/image_io.hpp"

namespace fs = std::filesystem;
using namespace ddb;
using namespace ddb::corpus;

namespace {

BiasedDatasetSpec small_spec(double rho, int per_class, std::uint64_t seed = 3) {
  BiasedDatasetSpec s;
  s.rho = rho;
  s.samples_per_class = per_class;
  s.val_per_group = 2;
  s.test_per_group = 3;
  s.seed = seed;
  return s.resolved();
}

struct Counts {
  std::vector<int> aligned, conflicting;
};

Counts train_counts(const Dataset& d) {
  Counts c{std::vector<int>(d.num_classes), std::vector<int>(d.num_classes)};
  for (const auto& s : d.samples) {
    if (s.split != Split::kTrain) continue;
    (s.c == Alignment::kAligned ? c.aligned : c.conflicting)[s.y]++;
  }
  return c;
}

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("ddb_corpus_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(BiasedGenerator, FullCorrelationHasNoConflictingSamples) {
  const auto d = generate_biased_dataset(small_spec(1.0, 100));
  const auto c = train_counts(d);
  for (int y = 0; y < 2; ++y) {
    EXPECT_EQ(c.aligned[y], 100);
    EXPECT_EQ(c.conflicting[y], 0);
  }
}

TEST(BiasedGenerator, AlignedCountIsRoundedRhoTimesN) {
  const auto d = generate_biased_dataset(small_spec(0.95, 1000));
  const auto c = train_counts(d);
  for (int y = 0; y < 2; ++y) {
    EXPECT_EQ(c.aligned[y], 950);
    EXPECT_EQ(c.conflicting[y], 50);
  }
  for (double rho : {0.0, 0.33, 0.5, 0.875, 0.999}) {
    for (int n : {7, 40, 101}) {
      const auto cc = train_counts(generate_biased_dataset(small_spec(rho, n)));
      const int expect = static_cast<int>(std::lround(rho * n));
      for (int y = 0; y < 2; ++y) {
        EXPECT_EQ(cc.aligned[y], expect) << rho << " " << n;
        EXPECT_EQ(cc.aligned[y] + cc.conflicting[y], n);
      }
    }
  }
}

TEST(BiasedGenerator, HalfCorrelationIsEmpiricallyHalf) {
  const auto d = generate_biased_dataset(small_spec(0.5, 500));
  // Fraction of train samples whose b matches their class's attribute.
  double match = 0, n = 0;
  for (const auto& s : d.samples) {
    if (s.split != Split::kTrain) continue;
    match += s.b == s.y ? 1 : 0;
    n += 1;
  }
  EXPECT_NEAR(match / n, 0.5, 0.02);
}

TEST(BiasedGenerator, HeldOutSplitsAreGroupBalanced) {
  BiasedDatasetSpec spec = small_spec(0.9, 50);
  spec.num_classes = 3;
  spec.bias_attributes = {"red", "green", "blue", "yellow"};
  const auto d = generate_biased_dataset(spec);
  std::map<std::tuple<int, int, int>, int> groups;
  for (const auto& s : d.samples) {
    if (s.split != Split::kTrain) groups[{static_cast<int>(s.split), s.y, s.b}]++;
  }
  EXPECT_EQ(groups.size(), 2u * 3 * 4);
  for (const auto& [k, v] : groups) EXPECT_EQ(v, std::get<0>(k) == static_cast<int>(Split::kVal) ? 2 : 3);
}

TEST(BiasedGenerator, IsDeterministicInSpecAndSeed) {
  const auto a = generate_biased_dataset(small_spec(0.8, 60, 11));
  const auto b = generate_biased_dataset(small_spec(0.8, 60, 11));
  const auto c = generate_biased_dataset(small_spec(0.8, 60, 12));
  ASSERT_EQ(a.samples.size(), b.samples.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(a.samples[i].id, b.samples[i].id);
    EXPECT_EQ(a.samples[i].b, b.samples[i].b);
    EXPECT_EQ(0, std::memcmp(a.samples[i].image.data(), b.samples[i].image.data(), a.samples[i].image.size() * 4));
    any_diff |= a.samples[i].image != c.samples[i].image;
  }
  EXPECT_TRUE(any_diff);
}

TEST(BiasedGenerator, OracleFlagsAreConsistent) {
  BiasedDatasetSpec spec = small_spec(0.7, 80);
  spec.bias_attributes = {"red", "green", "blue"};
  const auto d = generate_biased_dataset(spec);
  d.validate();
  for (const auto& s : d.samples) {
    ASSERT_NE(s.b, kUnknownBias);
    EXPECT_EQ(s.c, s.b == s.y ? Alignment::kAligned : Alignment::kConflicting);
    for (float v : s.image) ASSERT_TRUE(v >= 0.0F && v <= 1.0F);
  }
}

TEST(BiasedGenerator, ConflictingAttributesSpreadOverNonAlignedOnes) {
  BiasedDatasetSpec spec = small_spec(0.0, 300);
  spec.bias_attributes = {"red", "green", "blue"};
  const auto d = generate_biased_dataset(spec);
  std::map<std::pair<int, int>, int> n;
  for (const auto& s : d.samples) {
    if (s.split == Split::kTrain) n[{s.y, s.b}]++;
  }
  // Class 0 draws from {1,2}, class 1 from {0,2}; each about 150.
  EXPECT_EQ(n[std::make_pair(0, 0)], 0);
  EXPECT_EQ(n[std::make_pair(1, 1)], 0);
  EXPECT_NEAR(n[std::make_pair(0, 1)], 150, 30);
  EXPECT_NEAR(n[std::make_pair(1, 2)], 150, 30);
}

TEST(BiasedGenerator, RejectsInvalidSpecs) {
  auto s = small_spec(1.5, 10);
  EXPECT_THROW(generate_biased_dataset(s), ConfigError);
  s = small_spec(-0.1, 10);
  EXPECT_THROW(generate_biased_dataset(s), ConfigError);
  s = small_spec(0.9, 10);
  s.num_classes = 3;
  s.bias_attributes = {"red", "green"};
  EXPECT_THROW(generate_biased_dataset(s), ConfigError);
  s = small_spec(0.9, 10);
  s.channels = 2;
  EXPECT_THROW(generate_biased_dataset(s), ConfigError);
}

TEST(BiasedGenerator, SpecJsonRoundTrip) {
  auto s = small_spec(0.85, 33, 99);
  s.height = 20;
  const auto r = BiasedDatasetSpec::from_json(s.to_json());
  EXPECT_EQ(r.to_json(), s.to_json());
  const auto dflt = BiasedDatasetSpec::from_json(nlohmann::json{{"num_classes", 3}});
  EXPECT_EQ(dflt.bias_attributes.size(), 3u);
}

TEST(ColorOracle, RecoversTrainCorrelationWithinOneOverN) {
  for (double rho : {0.95, 0.7, 0.5}) {
    const auto d = generate_biased_dataset(small_spec(rho, 200));
    const auto g = eval::measure_generation_bias(d, eval::color_oracle_for(d), Split::kTrain);
    EXPECT_EQ(g.oracle_failures, 0u);
    EXPECT_NEAR(g.rho, rho, 1.0 / 200 + 1e-12);
  }
}

TEST(ColorOracle, GrayscaleImages) {
  auto spec = small_spec(0.5, 50);
  spec.channels = 1;
  const auto d = generate_biased_dataset(spec);
  for (const auto& s : d.samples) {
    EXPECT_EQ(color_oracle(s.image, 1, d.height, d.width, d.bias_attributes), s.b);
  }
}

TEST(Normalize, IdentityAndConstantImage) {
  const auto d = generate_biased_dataset(small_spec(0.9, 10));
  const auto same = normalize(d, {0, 0, 0}, {1, 1, 1});
  for (std::size_t i = 0; i < d.samples.size(); ++i) EXPECT_EQ(same.samples[i].image, d.samples[i].image);
  ASSERT_TRUE(same.normalization.has_value());

  Dataset c = d.empty_like();
  LabeledSample s;
  s.id = "k";
  s.image.assign(d.image_numel(), 0.5F);
  c.samples.push_back(s);
  const auto z = normalize(c, {0.5F, 0.5F, 0.5F}, {0.25F, 0.25F, 0.25F});
  for (float v : z.samples[0].image) EXPECT_EQ(v, 0.0F);
}

TEST(Normalize, EstimateThenApplyCentersChannels) {
  const auto d = generate_biased_dataset(small_spec(0.6, 200));
  const auto n = estimate_normalization(d, Split::kTrain);
  const auto z = normalize(d, n.mean, n.std);
  const std::size_t plane = static_cast<std::size_t>(d.height) * d.width;
  for (int c = 0; c < d.channels; ++c) {
    double sum = 0, sq = 0, cnt = 0;
    for (const auto& s : z.samples) {
      if (s.split != Split::kTrain) continue;
      for (std::size_t k = 0; k < plane; ++k) {
        const double v = s.image[c * plane + k];
        sum += v;
        sq += v * v;
        cnt += 1;
      }
    }
    EXPECT_NEAR(sum / cnt, 0.0, 0.05);
    EXPECT_NEAR(sq / cnt, 1.0, 0.05);
  }
}

TEST(Normalize, RejectsZeroStd) {
  const auto d = generate_biased_dataset(small_spec(0.9, 5));
  EXPECT_THROW(normalize(d, {0, 0, 0}, {1, 0, 1}), ConfigError);
  EXPECT_THROW(normalize(d, {0, 0}, {1, 1}), ConfigError);
}

class IngestTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root = temp_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(root / "img");
    for (const char* name : {"s1", "s2", "s3"}) {
      Image im{3, 8, 8, std::vector<float>(3 * 64, 0.25F)};
      write_png(root / "img" / (std::string(name) + ".png"), im);
    }
    opts.num_classes = 2;
    opts.bias_attributes = {"red", "green"};
  }
  void manifest(const std::string& body) {
    std::ofstream(root / "manifest.csv") << "id,path,y,b,split\n" << body;
  }
  fs::path root;
  IngestOptions opts;
};

TEST_F(IngestTest, AlignedUnknownAndResize) {
  manifest("s1,img/s1.png,0,0,train\ns2,img/s2.png,1,,test\ns3,img/s3.png,1,0,val\n");
  const auto d = ingest_image_folder(root, root / "manifest.csv", opts);
  ASSERT_EQ(d.samples.size(), 3u);
  EXPECT_EQ(d.samples[0].c, Alignment::kAligned);
  EXPECT_EQ(d.samples[1].b, kUnknownBias);
  EXPECT_EQ(d.samples[1].c, Alignment::kUnknown);
  EXPECT_EQ(d.samples[2].c, Alignment::kConflicting);
  EXPECT_EQ(d.samples[1].split, Split::kTest);
  EXPECT_EQ(d.samples[0].image.size(), 3u * 16 * 16);
  for (float v : d.samples[0].image) EXPECT_NEAR(v, 64.0 / 255.0, 1e-6);
}

TEST_F(IngestTest, MissingFileNamesTheRow) {
  manifest("s1,img/s1.png,0,0,train\nghost,img/nope.png,1,1,train\ns3,img/s3.png,1,0,train\n");
  try {
    ingest_image_folder(root, root / "manifest.csv", opts);
    FAIL() << "expected an ingest error";
  } catch (const IngestError& e) {
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos) << e.what();
  }
}

TEST_F(IngestTest, MalformedRowsAreRejected) {
  const std::vector<std::pair<std::string, std::string>> bad = {
      {"s1,img/s1.png,2,0,train\n", "out of range"},
      {"s1,img/s1.png,x,0,train\n", "not an integer"},
      {"s1,img/s1.png,0,5,train\n", "out of range"},
      {"s1,img/s1.png,0,0\n", "expected 5 fields"},
      {"s1,img/s1.png,0,0,holdout\n", "unknown split"},
      {"s1,img/s1.png,0,0,train\ns1,img/s2.png,0,0,train\n", "duplicate id"},
  };
  for (const auto& [body, needle] : bad) {
    manifest(body);
    try {
      ingest_image_folder(root, root / "manifest.csv", opts);
      ADD_FAILURE() << "accepted: " << body;
    } catch (const IngestError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
      EXPECT_NE(std::string(e.what()).find("s1"), std::string::npos) << e.what();
    }
  }
}

TEST(DatasetIo, SaveLoadAndPngExportRoundTrip) {
  const fs::path dir = temp_dir("io");
  const auto d = generate_biased_dataset(small_spec(0.9, 12));
  save_dataset(dir / "d.ddb", d);
  const auto r = load_dataset(dir / "d.ddb");
  ASSERT_EQ(r.samples.size(), d.samples.size());
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    EXPECT_EQ(r.samples[i].id, d.samples[i].id);
    EXPECT_EQ(r.samples[i].image, d.samples[i].image);
    EXPECT_EQ(r.samples[i].c, d.samples[i].c);
  }

  export_png_folder(d, dir / "png");
  IngestOptions o;
  o.bias_attributes = d.bias_attributes;
  const auto back = ingest_image_folder(dir / "png", dir / "png" / "manifest.csv", o);
  ASSERT_EQ(back.samples.size(), d.samples.size());
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    EXPECT_EQ(back.samples[i].b, d.samples[i].b);
    for (std::size_t k = 0; k < d.image_numel(); ++k) {
      ASSERT_NEAR(back.samples[i].image[k], d.samples[i].image[k], 0.5 / 255 + 1e-6);
    }
  }
}
