#include <Eigen/Dense>  // before httplib, see service.hpp
#include <catch2/catch_amalgamated.hpp>

#include <thread>

#include "rsedit/checkpoint.hpp"
#include "rsedit/service.hpp"
#include "support.hpp"

using namespace rsedit;
using namespace rsedit::service;
using json = nlohmann::json;

namespace {

const json kTinyTrain = {
    {"model", {{"denoiser", {{"num_blocks", 1}, {"channels", 4}, {"embed_dim", 8}}}, {"schedule", {{"coarse_steps", 6}}}}},
    {"train", {{"epochs", 3}, {"batch", 2}}}};

std::string png(const Image<float>& img) {
  const auto bytes = encode_rgb(img);
  return {bytes.begin(), bytes.end()};
}

std::string mask_png(Dims d) {
  Image<float> m(d, 1);
  for (int y = 8; y < 20; ++y) {
    for (int x = 6; x < 18; ++x) m.at(0, y, x) = 1.0f;
  }
  const auto bytes = encode_mask(m);
  return {bytes.begin(), bytes.end()};
}

struct Harness {
  test::TempDir dir{"rsedit-service"};
  std::unique_ptr<Server> server;
  std::unique_ptr<httplib::Client> client;

  explicit Harness(int workers = 1) { restart(workers); }

  void restart(int workers = 1) {
    client.reset();
    server.reset();
    ServiceConfig cfg;
    cfg.data_dir = dir.path();
    cfg.workers = workers;
    server = std::make_unique<Server>(cfg);
    const int port = server->start();
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
    client->set_read_timeout(30, 0);
  }

  httplib::Result post_multipart(const std::string& path, const json& request,
                                 std::vector<std::pair<std::string, std::string>> files = {}) {
    httplib::MultipartFormDataItems items{{"request", request.dump(), "", "application/json"}};
    for (auto& [name, bytes] : files) items.push_back({name, bytes, name + ".png", "image/png"});
    return client->Post(path, items);
  }

  std::string submit_train(const std::string& name, json extra = json::object()) {
    json r = kTinyTrain;
    r["name"] = name;
    r.merge_patch(extra);
    auto res = post_multipart("/jobs/train", r, {{"image", png(test::pattern_image({34, 32}))}});
    REQUIRE(res);
    REQUIRE(res->status == 202);
    return json::parse(res->body).at("id");
  }

  json job(const std::string& id) {
    auto res = client->Get("/jobs/" + id);
    REQUIRE(res);
    REQUIRE(res->status == 200);
    return json::parse(res->body);
  }

  json poll(const std::string& id, double seconds = 60) {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(seconds);
    while (true) {
      json j = job(id);
      if (j["state"] == "DONE" || j["state"] == "FAILED") return j;
      if (std::chrono::steady_clock::now() > deadline) return j;
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
  }
};

json body(const httplib::Result& res) { return json::parse(res->body); }

bool names_field(const json& err, const std::string& field) {
  for (const auto& f : err.value("fields", json::array())) {
    if (f.at("field") == field) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("healthz and empty checkpoint list", "[service]") {
  Harness h;
  auto res = h.client->Get("/healthz");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(body(res)["status"] == "ok");
  res = h.client->Get("/checkpoints");
  REQUIRE(res);
  CHECK(body(res)["checkpoints"].empty());
}

TEST_CASE("train then edit: submit, poll, fetch result", "[service]") {
  Harness h;
  const auto start = std::chrono::steady_clock::now();
  const std::string train_id = h.submit_train("toy");
  const json first = h.job(train_id);
  CHECK((first["state"] == "QUEUED" || first["state"] == "RUNNING" || first["state"] == "DONE"));
  CHECK(first["progress"].get<double>() >= 0.0);
  CHECK(first["progress"].get<double>() <= 1.0);
  CHECK(first["kind"] == "train");

  const json trained = h.poll(train_id);
  REQUIRE(trained["state"] == "DONE");
  CHECK(trained["progress"] == 1.0);
  auto res = h.client->Get("/jobs/" + train_id + "/result");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(body(res)["checkpoint"] == "toy");
  const Checkpoint ck = load_checkpoint(h.dir.path() / "checkpoints" / "toy.ck");
  CHECK(ck.model.denoiser.channels == 4);
  CHECK(ck.step == 3);

  res = h.client->Get("/checkpoints");
  REQUIRE(body(res)["checkpoints"].size() == 1);
  CHECK(body(res)["checkpoints"][0]["name"] == "toy");

  SECTION("multipart text-roi edit with a mask upload") {
    const json req = {{"checkpoint", "toy"}, {"mode", "text-roi"}, {"prompts", {"a red roof"}}, {"seed", 3}};
    res = h.post_multipart("/jobs/edit", req, {{"mask", mask_png({34, 32})}});
    REQUIRE(res);
    REQUIRE(res->status == 202);
    const std::string id = body(res)["id"];
    const json done = h.poll(id);
    REQUIRE(done["state"] == "DONE");
    res = h.client->Get("/jobs/" + id + "/result");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(res->get_header_value("Content-Type") == "image/png");
    const auto img = decode_rgb(std::vector<std::uint8_t>(res->body.begin(), res->body.end()));
    CHECK(img.dims() == Dims{34, 32});
    // Masks are stored content-addressed.
    const std::string stored = done["request"]["mask"];
    CHECK(std::filesystem::path(stored).parent_path().filename() == "masks");
  }

  SECTION("plain JSON edit body") {
    const json req = {{"checkpoint", "toy"}, {"mode", "text-full"}, {"prompts", {"snow"}}};
    res = h.client->Post("/jobs/edit", req.dump(), "application/json");
    REQUIRE(res);
    REQUIRE(res->status == 202);
    const json done = h.poll(body(res)["id"]);
    CHECK(done["state"] == "DONE");
  }

  SECTION("score job") {
    res = h.post_multipart("/jobs/score", {{"prompt", "a ship"}}, {{"image", png(test::pattern_image({20, 20}))}});
    REQUIRE(res);
    REQUIRE(res->status == 202);
    const std::string id = body(res)["id"];
    REQUIRE(h.poll(id)["state"] == "DONE");
    res = h.client->Get("/jobs/" + id + "/result");
    REQUIRE(res);
    const json records = body(res)["records"];
    REQUIRE(records.size() == 1);
    CHECK(records[0]["prompt"] == "a ship");
  }

  CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(60));
}

TEST_CASE("one worker runs jobs one at a time in order", "[service]") {
  Harness h(1);
  const std::string slow = h.submit_train("slow", {{"train", {{"epochs", 100000}}}});
  const std::string second = h.submit_train("second");

  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(20);
  while (h.job(slow)["state"] == "QUEUED" && std::chrono::steady_clock::now() < deadline) {
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  REQUIRE(h.job(slow)["state"] == "RUNNING");
  for (int i = 0; i < 10; ++i) {
    CHECK(h.job(second)["state"] == "QUEUED");
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }

  auto res = h.client->Get("/jobs/" + second + "/result");
  REQUIRE(res);
  CHECK(res->status == 409);
  CHECK(body(res)["state"] == "QUEUED");

  res = h.client->Delete("/jobs/" + slow);
  REQUIRE(res);
  CHECK(res->status == 200);
  const json cancelled = h.poll(slow);
  CHECK(cancelled["state"] == "FAILED");
  CHECK(cancelled["error"]["error"] == "cancelled");

  CHECK(h.poll(second)["state"] == "DONE");
  CHECK(h.job(slow)["sequence"].get<int>() < h.job(second)["sequence"].get<int>());

  res = h.client->Delete("/jobs/" + second);
  REQUIRE(res);
  CHECK(res->status == 409);
  res = h.client->Get("/jobs/" + slow + "/result");
  REQUIRE(res);
  CHECK(res->status == 409);
  CHECK(body(res)["error"] == "cancelled");
}

TEST_CASE("a queued job can be cancelled before it starts", "[service]") {
  Harness h(1);
  const std::string slow = h.submit_train("slow", {{"train", {{"epochs", 100000}}}});
  const std::string queued = h.submit_train("queued");
  auto res = h.client->Delete("/jobs/" + queued);
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(body(res)["state"] == "FAILED");
  h.client->Delete("/jobs/" + slow);
  h.poll(slow);
  std::this_thread::sleep_for(std::chrono::milliseconds(100));
  CHECK(h.job(queued)["state"] == "FAILED");
  CHECK_FALSE(std::filesystem::exists(h.dir.path() / "checkpoints" / "queued.ck"));
}

TEST_CASE("validation failures are 400 with the offending field", "[service]") {
  Harness h;
  SECTION("text-roi without a mask") {
    const json req = {{"checkpoint", "toy"}, {"mode", "text-roi"}, {"prompts", {"x"}}};
    auto res = h.post_multipart("/jobs/edit", req);
    REQUIRE(res);
    CHECK(res->status == 400);
    CHECK(body(res)["error"] == "invalid-request");
    CHECK(names_field(body(res), "mask"));
  }
  SECTION("text mode without a prompt") {
    auto res = h.client->Post("/jobs/edit", json{{"checkpoint", "toy"}, {"mode", "text-full"}}.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);
    CHECK(names_field(body(res), "prompt"));
  }
  SECTION("strength out of range") {
    const json req = {{"checkpoint", "toy"}, {"mode", "text-full"}, {"prompts", {"x"}}, {"eta", 1.5}};
    auto res = h.client->Post("/jobs/edit", req.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);
    CHECK(names_field(body(res), "eta"));
  }
  SECTION("undecodable mask") {
    const json req = {{"checkpoint", "toy"}, {"mode", "text-roi"}, {"prompts", {"x"}}};
    auto res = h.post_multipart("/jobs/edit", req, {{"mask", "not a png"}});
    REQUIRE(res);
    CHECK(res->status == 400);
    CHECK(names_field(body(res), "mask"));
  }
  SECTION("malformed JSON") {
    auto res = h.client->Post("/jobs/edit", "{nope", "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);
    CHECK(names_field(body(res), "request"));
  }
  SECTION("train without an image or with a bad name") {
    auto res = h.post_multipart("/jobs/train", {{"name", "ok"}});
    REQUIRE(res);
    CHECK(res->status == 400);
    CHECK(names_field(body(res), "image"));
    res = h.post_multipart("/jobs/train", {{"name", "../evil"}}, {{"image", png(test::pattern_image({34, 32}))}});
    REQUIRE(res);
    CHECK(res->status == 400);
    CHECK(names_field(body(res), "name"));
  }
  SECTION("train with an invalid config") {
    json r = kTinyTrain;
    r["name"] = "bad";
    r["train"]["batch"] = 0;
    auto res = h.post_multipart("/jobs/train", r, {{"image", png(test::pattern_image({34, 32}))}});
    REQUIRE(res);
    CHECK(res->status == 400);
  }
  SECTION("score without a prompt") {
    auto res = h.post_multipart("/jobs/score", json::object(), {{"image", png(test::pattern_image({8, 8}))}});
    REQUIRE(res);
    CHECK(res->status == 400);
    CHECK(names_field(body(res), "prompt"));
  }
}

TEST_CASE("unknown resources are 404", "[service]") {
  Harness h;
  const json req = {{"checkpoint", "missing"}, {"mode", "text-full"}, {"prompts", {"x"}}};
  auto res = h.client->Post("/jobs/edit", req.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 404);
  CHECK(names_field(body(res), "checkpoint"));

  for (const std::string path : {"/jobs/0123abcd", "/jobs/0123abcd/result"}) {
    res = h.client->Get(path);
    REQUIRE(res);
    CHECK(res->status == 404);
    CHECK(body(res)["error"] == "not-found");
  }
  res = h.client->Delete("/jobs/0123abcd");
  REQUIRE(res);
  CHECK(res->status == 404);
  res = h.client->Get("/nowhere");
  REQUIRE(res);
  CHECK(res->status == 404);
}

TEST_CASE("failed jobs report their error kind", "[service]") {
  Harness h;
  // A one-scale checkpoint cannot serve the default guided range.
  json r = kTinyTrain;
  r["name"] = "flat";
  r["train"]["epochs"] = 1;
  auto res = h.post_multipart("/jobs/train", r, {{"image", png(test::pattern_image({30, 30}))}});
  REQUIRE(res);
  REQUIRE(h.poll(body(res)["id"])["state"] == "DONE");
  res = h.client->Post("/jobs/edit", json{{"checkpoint", "flat"}, {"mode", "text-full"}, {"prompts", {"x"}}}.dump(),
                       "application/json");
  REQUIRE(res);
  REQUIRE(res->status == 202);
  const json failed = h.poll(body(res)["id"]);
  CHECK(failed["state"] == "FAILED");
  CHECK(failed["error"]["error"] == "invalid-config");
}

TEST_CASE("jobs survive a restart; running ones become FAILED", "[service]") {
  test::TempDir dir{"rsedit-store"};
  {
    JobStore store(dir.path() / "jobs");
    Job running;
    running.id = "00000000000000aa";
    running.kind = JobKind::Train;
    running.state = JobState::Running;
    store.insert(running);
    Job done;
    done.id = "00000000000000bb";
    done.kind = JobKind::Score;
    done.state = JobState::Done;
    done.result = "results/x.jsonl";
    store.insert(done);
  }
  ServiceConfig cfg;
  cfg.data_dir = dir.path();
  JobManager jobs(cfg);
  const auto a = jobs.get("00000000000000aa");
  REQUIRE(a);
  CHECK(a->state == JobState::Failed);
  CHECK(a->error["error"] == "interrupted");
  const auto b = jobs.get("00000000000000bb");
  REQUIRE(b);
  CHECK(b->state == JobState::Done);
  CHECK(b->result == "results/x.jsonl");
}

TEST_CASE("variants endpoint uses the offline bank without an LLM", "[service]") {
  Harness h;
  auto res = h.client->Post("/variants", json{{"prompt", "A ship is on fire"}, {"k", 5}}.dump(), "application/json");
  REQUIRE(res);
  REQUIRE(res->status == 200);
  const json b = body(res);
  CHECK(b["variants"].size() == 5);
  CHECK(b["variants"][0] == "A ship is on fire");
  res = h.client->Post("/variants", json{{"prompt", " "}}.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);
  res = h.client->Post("/variants", json{{"prompt", "x"}, {"k", 0}}.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);
  CHECK(names_field(body(res), "k"));
}
