#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <future>
#include <thread>

#include <httplib.h>

#include "meaformer/data/dataset.hpp"
#include "meaformer/service/service.hpp"

using namespace meaformer;
using namespace meaformer::service;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path d = fs::temp_directory_path() / "meaformer_service_test";
  fs::create_directories(d);
  return d;
}

// Untrained desk models; checkpoints and a small demo set are written once.
struct Fixture {
  fs::path step1, step2, collapsed, demo;
  std::vector<data::Phantom> cases;

  Fixture() {
    const fs::path d = temp_dir();
    step1 = d / "s1.meaf";
    step2 = d / "s2.meaf";
    collapsed = d / "s1_collapsed.meaf";
    demo = d / "demo.mead";
    model::MeaFormer<float> s1(model::ModelConfig::step1(), 1);
    model::save_checkpoint(s1, step1);
    for (auto* t : {&s1.reg_out.weight, &s1.reg_out.bias, &s1.head_convs.back().weight, &s1.head_convs.back().bias})
      for (auto& v : t->data()) v = 0.0f;
    model::save_checkpoint(s1, collapsed);
    model::MeaFormer<float> s2(model::ModelConfig::step2(), 2);
    model::save_checkpoint(s2, step2);
    cases = data::generate_dataset(3, 5, {});
    data::write_dataset(cases, demo);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

const MeasurementService& service_instance() {
  static const MeasurementService svc([] {
    ServiceOptions o;
    o.step1 = fixture().step1;
    o.step2 = fixture().step2;
    o.demo_datasets["demo"] = fixture().demo;
    return o;
  }());
  return svc;
}

json measure_request(const data::Phantom& p, geom::Point click) {
  return {{"image", {{"height", p.height()}, {"width", p.width()}, {"data", encode_plane(p.image)}}},
          {"click", {click.x, click.y}},
          {"spacing_mm_per_px", p.spacing_mm_per_px}};
}

geom::Point lesion_click(const data::Phantom& p) { return data::sample_click(p.mask, 0); }

}  // namespace

TEST(Base64, KnownVectors) {
  auto enc = [](const std::string& s) { return base64_encode(std::vector<uint8_t>(s.begin(), s.end())); };
  EXPECT_EQ(enc(""), "");
  EXPECT_EQ(enc("M"), "TQ==");
  EXPECT_EQ(enc("Ma"), "TWE=");
  EXPECT_EQ(enc("Man"), "TWFu");
  for (const std::string s : {"", "M", "Ma", "Man", "hello world!"}) {
    const auto back = base64_decode(enc(s));
    EXPECT_EQ(std::string(back.begin(), back.end()), s);
  }
  EXPECT_THROW(base64_decode("abc"), RequestError);
  EXPECT_THROW(base64_decode("a*c="), RequestError);
}

TEST(Base64, PlaneRoundTripIsExactForFloatValues) {
  const auto& p = fixture().cases[0];
  EXPECT_EQ(decode_plane(encode_plane(p.image), 64, 64), p.image);  // phantom pixels are f32-representable
  EXPECT_THROW(decode_plane(encode_plane(p.image), 64, 63), RequestError);
}

TEST(Digest, Sha256OfKnownContent) {
  const fs::path f = temp_dir() / "abc.txt";
  std::ofstream(f) << "abc";
  EXPECT_EQ(sha256_file(f), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Service, MeasureHappyPath) {
  const auto& p = fixture().cases[0];
  const auto r = service_instance().measure(measure_request(p, lesion_click(p)).dump());
  ASSERT_EQ(r.status, 200) << r.body;
  const json body = json::parse(r.body);
  for (const char* src : {"segmentation", "heatmap", "regression", "fused"}) {
    const json& m = body["measurements"][src];
    auto len = [](const json& axis) {
      return std::hypot(axis[0][0].get<double>() - axis[1][0].get<double>(),
                        axis[0][1].get<double>() - axis[1][1].get<double>());
    };
    if (m["degenerate"].get<bool>()) continue;
    EXPECT_NEAR(len(m["long_axis"]), m["long_px"].get<double>(), 1e-6) << src;
    EXPECT_NEAR(len(m["short_axis"]), m["short_px"].get<double>(), 1e-6) << src;
    EXPECT_NEAR(m["long_mm"].get<double>(), m["long_px"].get<double>() * 0.8, 1e-9) << src;
  }
  EXPECT_TRUE(body.contains("box"));
  EXPECT_TRUE(body.contains("contour"));
  EXPECT_TRUE(body.contains("flags"));
}

TEST(Service, MatchesThePipeline) {
  const auto& p = fixture().cases[1];
  const auto click = lesion_click(p);
  const auto r = service_instance().measure(measure_request(p, click).dump());
  ASSERT_EQ(r.status, 200);
  const auto direct = service_instance().measurer().measure(p.image, click, p.spacing_mm_per_px);
  EXPECT_EQ(json::parse(r.body), report_json(direct));
}

TEST(Service, IdenticalRequestsGiveIdenticalBodies) {
  const auto& p = fixture().cases[2];
  const std::string req = measure_request(p, lesion_click(p)).dump();
  const std::string first = service_instance().measure(req).body;
  std::vector<std::future<std::string>> futures;
  for (int i = 0; i < 4; ++i)
    futures.push_back(std::async(std::launch::async, [&] { return service_instance().measure(req).body; }));
  for (auto& f : futures) EXPECT_EQ(f.get(), first);
}

TEST(Service, DatasetReferenceEqualsInlineImage) {
  const auto& p = fixture().cases[1];
  const auto click = lesion_click(p);
  const json ref{{"dataset", "demo"}, {"index", 1}, {"click", {{"x", click.x}, {"y", click.y}}}};
  const auto a = service_instance().measure(ref.dump());
  const auto b = service_instance().measure(measure_request(p, click).dump());
  ASSERT_EQ(a.status, 200);
  EXPECT_EQ(a.body, b.body);
}

TEST(Service, BadRequests) {
  const auto& p = fixture().cases[0];
  EXPECT_EQ(service_instance().measure(measure_request(p, {-1.0, 5.0}).dump()).status, 400);
  EXPECT_EQ(service_instance().measure(measure_request(p, {64.0, 5.0}).dump()).status, 400);
  EXPECT_EQ(service_instance().measure("{not json").status, 400);
  EXPECT_EQ(service_instance().measure("[1,2]").status, 400);
  json no_click = measure_request(p, {3, 3});
  no_click.erase("click");
  EXPECT_EQ(service_instance().measure(no_click.dump()).status, 400);
  json bad_spacing = measure_request(p, {3, 3});
  bad_spacing["spacing_mm_per_px"] = -1.0;
  EXPECT_EQ(service_instance().measure(bad_spacing.dump()).status, 400);
  EXPECT_EQ(service_instance().measure(json{{"dataset", "demo"}, {"index", 9}, {"click", {3, 3}}}.dump()).status, 400);
  EXPECT_EQ(service_instance().measure(json{{"dataset", "other"}, {"index", 0}, {"click", {3, 3}}}.dump()).status, 400);
  const json err = json::parse(service_instance().measure("{not json").body);
  EXPECT_EQ(err["error"], "bad_request");
}

TEST(Service, DegenerateBoxIs422) {
  ServiceOptions o;
  o.step1 = fixture().collapsed;
  o.step2 = fixture().step2;
  const MeasurementService svc(o);
  const auto& p = fixture().cases[0];
  const auto r = svc.measure(measure_request(p, lesion_click(p)).dump());
  EXPECT_EQ(r.status, 422);
  EXPECT_EQ(json::parse(r.body)["error"], "degenerate_box");
}

TEST(Service, Assess) {
  auto cls = [](const json& req) {
    const auto r = service_instance().assess(req.dump());
    return r.status == 200 ? json::parse(r.body)["code"].get<std::string>() : std::to_string(r.status);
  };
  EXPECT_EQ(cls({{"baseline", 20}, {"followup", 13}}), "PR");
  EXPECT_EQ(cls({{"baseline", 20}, {"followup", 25}}), "PD");
  EXPECT_EQ(cls({{"baseline", {{"long_mm", 20}}}, {"followup", {{"long_mm", 20}}}}), "SD");
  EXPECT_EQ(cls({{"baseline", 0}, {"followup", 13}}), "400");
  EXPECT_EQ(cls({{"baseline", "twenty"}, {"followup", 13}}), "400");
  // full measure responses are accepted
  const json base{{"measurements", {{"fused", {{"long_mm", 20.0}}}}}};
  const json follow{{"measurements", {{"fused", {{"long_mm", 0.0}}}}}};
  EXPECT_EQ(cls({{"baseline", base}, {"followup", follow}}), "CR");
}

TEST(Service, HealthReportsFileDigests) {
  const auto r = service_instance().health();
  ASSERT_EQ(r.status, 200);
  const json body = json::parse(r.body);
  EXPECT_EQ(body["status"], "ok");
  EXPECT_EQ(body["checkpoints"]["step1"]["sha256"], sha256_file(fixture().step1));
  EXPECT_EQ(body["checkpoints"]["step2"]["sha256"], sha256_file(fixture().step2));
}

TEST(Service, MissingCheckpointFailsAtBoot) {
  ServiceOptions o;
  o.step1 = temp_dir() / "absent.meaf";
  o.step2 = fixture().step2;
  EXPECT_THROW(MeasurementService{o}, model::CheckpointError);
}

TEST(Service, DemoEndpoints) {
  const json index = json::parse(service_instance().demo_index().body);
  ASSERT_EQ(index["datasets"].size(), 1u);
  EXPECT_EQ(index["datasets"][0]["cases"], 3);
  const auto r = service_instance().demo_case("demo", 2);
  ASSERT_EQ(r.status, 200);
  const json c = json::parse(r.body);
  EXPECT_EQ(decode_plane(c["image"], c["height"], c["width"]), fixture().cases[2].image);
  EXPECT_EQ(service_instance().demo_case("demo", 3).status, 404);
}

TEST(Http, EndToEnd) {
  auto server = make_server(service_instance());
  const int port = server->bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { server->listen_after_bind(); });
  server->wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  const auto health = client.Get("/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);

  const auto& p = fixture().cases[0];
  const auto res = client.Post("/measure", measure_request(p, lesion_click(p)).dump(), "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_TRUE(res->has_header("X-Latency-Ms"));
  EXPECT_EQ(res->body, service_instance().measure(measure_request(p, lesion_click(p)).dump()).body);

  const auto bad = client.Post("/measure", measure_request(p, {-1, 5}).dump(), "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  const auto assess = client.Post("/assess", R"({"baseline": 20, "followup": 13})", "application/json");
  ASSERT_TRUE(assess);
  EXPECT_EQ(json::parse(assess->body)["code"], "PR");
  const auto demo = client.Get("/demo/demo/0");
  ASSERT_TRUE(demo);
  EXPECT_EQ(demo->status, 200);

  server->stop();
  th.join();
}
