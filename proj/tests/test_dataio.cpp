#include <gtest/gtest.h>

#include <opencv2/imgcodecs.hpp>
#include <set>

#include "factify/dataio.hpp"
#include "factify/synth.hpp"
#include "oracles.hpp"

using namespace factify;
namespace fs = std::filesystem;

namespace {

const char* kHeader = "id,claim,claim_image,document,document_image,category\n";

fs::path write_csv(const oracle::TempDir& dir, const std::string& name, const std::string& body) {
  const auto p = dir / name;
  io::atomic_write(p, body);
  return p;
}

Image checker(int w, int h) {
  Image img{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3)};
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<std::uint8_t>((i * 37) % 251);
  return img;
}

}  // namespace

TEST(Csv, QuotingBomAndMultiline) {
  const auto r = csv::parse("\xEF\xBB\xBF" "a,b\r\n\"x, y\",\"say \"\"hi\"\"\"\n\"two\nlines\",z\n\n");
  ASSERT_TRUE(r.errors.empty());
  ASSERT_EQ(r.records.size(), 3u);
  EXPECT_EQ(r.records[0].fields, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(r.records[1].fields, (std::vector<std::string>{"x, y", "say \"hi\""}));
  EXPECT_EQ(r.records[2].fields, (std::vector<std::string>{"two\nlines", "z"}));
  EXPECT_EQ(r.records[2].line, 3u);
}

TEST(Csv, MalformedRecordsAreReportedAndSkipped) {
  const auto r = csv::parse("a,b\nx\"y,1\n\"ok\",2\n\"open,3");
  EXPECT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.errors.size(), 2u);
}

TEST(Csv, FormatRoundTrip) {
  const std::vector<std::string> fields{"plain", "with,comma", "with \"quote\"", "multi\nline", ""};
  const auto r = csv::parse(csv::format_row(fields));
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0].fields, fields);
}

TEST(LoadSplit, FiveRows) {
  oracle::TempDir dir("load");
  const auto p = write_csv(dir, "train.csv",
                           std::string(kHeader) +
                               "1,Claim one,c1.png,Doc one,d1.png,Support_Text\n"
                               "2,Claim two,c2.png,Doc two,d2.png,Support_Multimodal\n"
                               "3,Claim three,c3.png,Doc three,d3.png,Insufficient_Text\n"
                               "4,Claim four,c4.png,Doc four,d4.png,Insufficient_Multimodal\n"
                               "5,\"Claim, five\",c5.png,\"Doc\nfive\",d5.png,Refute\n");
  const auto m = dataio::load_split(p, "train");
  ASSERT_EQ(m.rows.size(), 5u);
  EXPECT_TRUE(m.labeled());
  EXPECT_TRUE(m.report.dropped.empty());
  EXPECT_EQ(m.rows[4].claim_text, "Claim, five");
  EXPECT_EQ(m.rows[4].doc_text, "Doc five");
  EXPECT_EQ(m.rows[4].gold_label, Label5::Refute);
  EXPECT_EQ(m.base_dir(), dir.path());
}

TEST(LoadSplit, MissingDocumentColumn) {
  oracle::TempDir dir("missing");
  const auto p = write_csv(dir, "train.csv", "id,claim,claim_image,document_image,category\n1,a,b,c,Refute\n");
  try {
    dataio::load_split(p, "train");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingColumn);
    EXPECT_EQ(e.detail(), "document");
    EXPECT_EQ(exit_code_for(e.kind()), 2);
  }
}

TEST(LoadSplit, CategoryOptionalOutsideTrain) {
  oracle::TempDir dir("unlabeled");
  const auto p = write_csv(dir, "test.csv", "id,claim,claim_image,document,document_image\n1,a,x.png,b,y.png\n");
  const auto m = dataio::load_split(p, "test");
  ASSERT_EQ(m.rows.size(), 1u);
  EXPECT_FALSE(m.rows[0].gold_label);
  EXPECT_FALSE(m.labeled());
  EXPECT_THROW(dataio::load_split(p, "train"), Error);
}

TEST(LoadSplit, DropsBadRowsWithReasons) {
  oracle::TempDir dir("drops");
  const auto p = write_csv(dir, "train.csv",
                           std::string(kHeader) +
                               "1,   ,c.png,Doc,d.png,Refute\n"
                               "2,Claim,c.png,Doc,d.png,Maybe\n"
                               "3,Claim,c.png,Doc,d.png,Refute\n"
                               "3,Again,c.png,Doc,d.png,Refute\n"
                               "4,short row\n"
                               "5,Claim,c.png,Doc,d.png,\n");
  const auto m = dataio::load_split(p, "train");
  ASSERT_EQ(m.rows.size(), 1u);
  EXPECT_EQ(m.rows[0].id, "3");
  ASSERT_EQ(m.report.dropped.size(), 5u);
  EXPECT_EQ(m.report.dropped[0].reason, "empty claim");
  EXPECT_EQ(m.report.dropped[0].line, 2u);
  EXPECT_EQ(m.report.dropped[2].reason, "duplicate id");
}

TEST(LoadSplit, ColumnMapAndSerializeRoundTrip) {
  oracle::TempDir dir("colmap");
  const auto p = write_csv(dir, "train.csv",
                           "ID,Claim,claim_image,Doc,document_image,Category\n"
                           "a1,Caf\x65\xCC\x81  opens,c.png,\"A \"\"quoted\"\" doc\",d.png,Refute\n");
  const dataio::ColumnMap map{{"id", "ID"}, {"claim", "Claim"}, {"document", "Doc"}, {"category", "Category"}};
  const auto m = dataio::load_split(p, "train", map);
  ASSERT_EQ(m.rows.size(), 1u);
  EXPECT_EQ(m.rows[0].claim_text, "Caf\xC3\xA9 opens");
  EXPECT_EQ(m.rows[0].doc_text, "A \"quoted\" doc");

  const auto out = dir / "again.csv";
  dataio::write_split(m, out);
  const auto back = dataio::load_split(out, "train");
  EXPECT_EQ(back.rows, m.rows);
  EXPECT_EQ(dataio::serialize_split(back), dataio::serialize_split(m));

  const auto stripped = dataio::without_labels(m);
  EXPECT_FALSE(stripped.rows[0].gold_label);
  EXPECT_EQ(dataio::serialize_split(stripped).find("category"), std::string::npos);
}

TEST(Images, PngRoundTripAndChannelConversion) {
  const auto img = checker(7, 5);
  EXPECT_EQ(dataio::decode_image(dataio::encode_png(img)), img);

  cv::Mat gray(4, 3, CV_8UC1, cv::Scalar(90));
  std::vector<unsigned char> bytes;
  cv::imencode(".png", gray, bytes);
  auto g = dataio::decode_image(bytes);
  EXPECT_EQ(g.width, 3);
  EXPECT_EQ(g.height, 4);
  EXPECT_EQ(g.rgb, std::vector<std::uint8_t>(36, 90));

  cv::Mat bgra(2, 2, CV_8UC4, cv::Scalar(10, 20, 30, 128));
  cv::imencode(".png", bgra, bytes);
  auto a = dataio::decode_image(bytes);
  EXPECT_EQ(a.rgb, (std::vector<std::uint8_t>{30, 20, 10, 30, 20, 10, 30, 20, 10, 30, 20, 10}));
}

TEST(Images, TruncatedOrEmptyBytesAreDecodeFailures) {
  auto bytes = dataio::encode_png(checker(16, 16));
  bytes.resize(bytes.size() / 3);
  for (const auto& b : {bytes, std::vector<unsigned char>{}, std::vector<unsigned char>{'n', 'o', 'p', 'e'}}) {
    try {
      dataio::decode_image(b);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::DecodeFailure);
    }
  }
}

TEST(Fetch, RemoteImagesAreDownloadedOnce) {
  oracle::TempDir dir("fetch");
  auto transport = std::make_shared<oracle::CountingTransport>();
  const std::string uri = "https://example.org/img/a.png?size=2";
  const auto png = dataio::encode_png(checker(2, 2));
  transport->responses[uri] = png;

  dataio::ImageFetcher fetcher(dir.path(), transport, {0, 0});
  EXPECT_EQ(fetcher.fetch_bytes(uri), png);
  EXPECT_EQ(transport->calls.load(), 1);
  const auto cached = dataio::image_cache_path(dir.path(), uri);
  EXPECT_EQ(cached.parent_path(), dir.path() / "images");
  EXPECT_EQ(cached.filename().string(), sha256_hex(uri) + ".png");
  EXPECT_TRUE(fs::exists(cached));

  dataio::ImageFetcher second(dir.path(), transport, {0, 0});
  EXPECT_EQ(second.fetch_bytes(uri), png);
  EXPECT_EQ(transport->calls.load(), 1);
}

TEST(Fetch, RetriesThenSucceedsOrFails) {
  oracle::TempDir dir("retry");
  auto transport = std::make_shared<oracle::CountingTransport>();
  const std::string uri = "http://host/b.jpg";
  transport->responses[uri] = {1, 2, 3};
  transport->failures_before_success = 2;
  dataio::ImageFetcher ok(dir.path(), transport, {2, 1});
  EXPECT_EQ(ok.fetch_bytes(uri), (std::vector<unsigned char>{1, 2, 3}));
  EXPECT_EQ(transport->calls.load(), 3);

  auto flaky = std::make_shared<oracle::CountingTransport>();
  flaky->failures_before_success = 100;
  dataio::ImageFetcher give_up(dir.path(), flaky, {2, 1});
  try {
    give_up.fetch_bytes("http://host/never.png");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::FetchFailure);
  }
  EXPECT_EQ(flaky->calls.load(), 3);
  EXPECT_FALSE(fs::exists(dataio::image_cache_path(dir.path(), "http://host/never.png")));
}

TEST(Fetch, LocalReferencesResolveAgainstBaseDir) {
  oracle::TempDir dir("local");
  io::atomic_write(dir / "pics/x.png", dataio::encode_png(checker(3, 3)));
  auto transport = std::make_shared<oracle::CountingTransport>();
  dataio::ImageFetcher fetcher(dir / "cache", transport);
  EXPECT_EQ(fetcher.fetch("pics/x.png", dir.path()), checker(3, 3));
  EXPECT_EQ(fetcher.fetch("file://" + (dir / "pics/x.png").string()), checker(3, 3));
  EXPECT_THROW(fetcher.fetch_bytes("pics/missing.png", dir.path()), Error);
  EXPECT_EQ(transport->calls.load(), 0);
}

TEST(Synth, SizesStratificationAndDisjointness) {
  synth::SynthSpec spec;
  const auto ds = synth::synth_dataset(spec);
  EXPECT_EQ(ds.train.rows.size(), 350u);
  EXPECT_EQ(ds.val.rows.size(), 75u);
  EXPECT_EQ(ds.test.rows.size(), 75u);
  std::set<std::string> ids;
  for (const auto* m : {&ds.train, &ds.val, &ds.test}) {
    std::array<int, 5> per{};
    for (const auto& r : m->rows) {
      EXPECT_TRUE(ids.insert(r.id).second);
      ++per[index_of(*r.gold_label)];
      EXPECT_TRUE(ds.images.count(r.claim_image_ref));
      EXPECT_TRUE(ds.images.count(r.doc_image_ref));
    }
    const int expect = static_cast<int>(m->rows.size() / 5);
    for (int c : per) EXPECT_EQ(c, expect);
  }
}

TEST(Synth, DeterministicAndSeedSensitive) {
  synth::SynthSpec spec;
  spec.per_category = 12;
  const auto a = synth::synth_dataset(spec);
  const auto b = synth::synth_dataset(spec);
  EXPECT_EQ(dataio::serialize_split(a.train), dataio::serialize_split(b.train));
  EXPECT_EQ(a.images, b.images);
  spec.seed = 43;
  EXPECT_NE(dataio::serialize_split(synth::synth_dataset(spec).train), dataio::serialize_split(a.train));
}

TEST(Synth, WrittenFilesLoadBack) {
  oracle::TempDir dir("synth");
  synth::SynthSpec spec;
  spec.per_category = 4;
  auto ds = synth::synth_dataset(spec);
  synth::write_synth_dataset(ds, dir.path());
  const auto train = dataio::load_split(dir / "train.csv", "train");
  EXPECT_EQ(train.rows, ds.train.rows);
  const auto& ref = train.rows.front().claim_image_ref;
  EXPECT_EQ(dataio::decode_image(*io::read_file(dir / ref)), ds.images.at(ref));
}
