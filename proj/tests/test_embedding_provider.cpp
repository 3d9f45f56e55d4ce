#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "llmverify/embedding_provider.hpp"
#include "llmverify/metrics.hpp"
#include "test_server.hpp"

using namespace llmverify;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    auto dir = fs::temp_directory_path() / "llmverify_provider_test";
    fs::create_directories(dir);
    return dir / name;
}

EmbeddingVector iota_vec(std::size_t z, double start) {
    EmbeddingVector v(z);
    for (std::size_t j = 0; j < z; ++j) v[j] = start + static_cast<double>(j);
    return v;
}

}  // namespace

TEST(SyntheticProvider, ZeroNoiseReturnsCenter) {
    SyntheticProvider p(4, 1);
    p.add_profile("cfg", {{0.1, -0.2, 0.3, 0.4}, 0.0});
    EXPECT_EQ(p.embed("x", {"q", "cfg", "n", 5}), (EmbeddingVector{0.1, -0.2, 0.3, 0.4}));
}

TEST(SyntheticProvider, Deterministic) {
    SyntheticProvider p(32, 99);
    p.add_profile("cfg", {EmbeddingVector(32, 0.0), 1.0});
    const EmbedContext ctx{"q1", "cfg", "node", 3};
    EXPECT_EQ(p.embed("a", ctx), p.embed("b", ctx));
    SyntheticProvider again(32, 99);
    again.add_profile("cfg", {EmbeddingVector(32, 0.0), 1.0});
    EXPECT_EQ(p.embed("a", ctx), again.embed("a", ctx));
    EXPECT_NE(p.embed("a", ctx), p.embed("a", {"q1", "cfg", "node", 4}));
    EXPECT_NE(p.embed("a", ctx), p.embed("a", {"q1", "cfg", "other", 3}));
}

TEST(SyntheticProvider, PerQuestionProfileOverridesWildcard) {
    SyntheticProvider p(2, 1);
    p.add_profile("cfg", {{0.0, 0.0}, 0.0});
    p.add_profile("cfg", "special", {{5.0, 5.0}, 0.0});
    EXPECT_EQ(p.embed("", {"other", "cfg", "n", 0}), (EmbeddingVector{0.0, 0.0}));
    EXPECT_EQ(p.embed("", {"special", "cfg", "n", 0}), (EmbeddingVector{5.0, 5.0}));
    EXPECT_THROW(p.embed("", {"q", "missing", "n", 0}), NotFound);
    EXPECT_THROW(p.add_profile("bad", {{0.0}, 0.0}), InvalidInput);
    EXPECT_THROW(p.add_profile("bad", {{0.0, 0.0}, -1.0}), InvalidInput);
}

TEST(SyntheticProvider, RmsScatterOf500SamplesNearSigma) {
    const std::size_t z = 1536;
    SyntheticProvider p(z, 2024);
    p.add_profile("cfg", {EmbeddingVector(z, 0.0), 0.0048});
    std::vector<EmbeddingVector> xs;
    for (std::uint64_t t = 0; t < 500; ++t) xs.push_back(p.embed("", {"q", "cfg", "n", t}));
    const auto c = summarize(xs);
    EXPECT_NEAR(c.rms_scatter, 0.0048, 0.1 * 0.0048);
}

TEST(SyntheticProvider, MeanConvergesToCenter) {
    const std::size_t z = 64;
    const double sigma = 0.3;
    SyntheticProvider p(z, 5);
    const auto center = iota_vec(z, -10.0);
    p.add_profile("cfg", {center, sigma});
    for (std::size_t n : {100u, 400u, 1600u}) {
        std::vector<EmbeddingVector> xs;
        for (std::uint64_t t = 0; t < n; ++t) xs.push_back(p.embed("", {"q", "cfg", "n", t}));
        const double err = euclidean(summarize(xs).mean, center);
        EXPECT_LE(err, 5.0 * sigma * std::sqrt(static_cast<double>(z) / static_cast<double>(n))) << n;
    }
}

TEST(PlaceCenters, ReproducesDistances) {
    const std::vector<std::vector<double>> d{{0.0, 0.1558, 0.3129}, {0.1558, 0.0, 0.3141}, {0.3129, 0.3141, 0.0}};
    const auto base = random_unit_vector(128, 3, "q");
    EXPECT_NEAR(euclidean(base, EmbeddingVector(128, 0.0)), 1.0, 1e-12);
    const auto c = place_centers(d, base, 4);
    ASSERT_EQ(c.size(), 3u);
    for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t b = 0; b < 3; ++b) EXPECT_NEAR(euclidean(c[a], c[b]), d[a][b], 1e-12);
    }
    EXPECT_EQ(c[0], base);
    EXPECT_THROW(place_centers({{0.0, 1.0, 5.0}, {1.0, 0.0, 1.0}, {5.0, 1.0, 0.0}}, base, 4), InvalidInput);
}

TEST(EmbeddingStore, EmptyFile) {
    const auto path = temp_file("empty.jsonl");
    std::ofstream(path).close();
    const auto store = load_embedding_store(path.string());
    EXPECT_EQ(store.size(), 0u);
    EXPECT_EQ(store.dimension(), 0u);
    EXPECT_THROW(store.embed("", {"q", "m", "m", 0}), NotFound);
}

TEST(EmbeddingStore, Singleton) {
    const auto path = temp_file("single.jsonl");
    std::ofstream(path) << R"({"q":"Q1","m":"llama","i":0,"v":[0.25,-1.5,3.0]})" << "\n";
    const auto store = load_embedding_store(path.string());
    ASSERT_EQ(store.size(), 1u);
    EXPECT_EQ(store.embed("", {"Q1", "llama", "llama", 0}), (EmbeddingVector{0.25, -1.5, 3.0}));
    EXPECT_THROW(store.embed("", {"Q1", "llama", "llama", 1}), NotFound);
}

TEST(EmbeddingStore, RoundTripIsBitExact) {
    std::mt19937_64 rng(100);
    std::normal_distribution<double> g(0.0, 1.0);
    EmbeddingStore store;
    for (std::uint64_t i = 0; i < 100; ++i) {
        EmbeddingVector v(16);
        for (auto& x : v) x = g(rng) * std::pow(10.0, static_cast<double>(i % 30) - 15.0);
        store.insert({"q" + std::to_string(i % 7), "m" + std::to_string(i % 3), i}, std::move(v));
    }
    const auto path = temp_file("roundtrip.jsonl");
    write_embedding_store(path.string(), store);
    const auto back = load_embedding_store(path.string());
    ASSERT_EQ(back.size(), store.size());
    for (const auto& [key, v] : store.entries()) {
        const auto& w = back.at(key);
        ASSERT_EQ(v.size(), w.size());
        for (std::size_t j = 0; j < v.size(); ++j) ASSERT_EQ(std::bit_cast<std::uint64_t>(v[j]), std::bit_cast<std::uint64_t>(w[j]));
    }
}

TEST(EmbeddingStore, ErrorsCarryLineNumbers) {
    const auto path = temp_file("bad.jsonl");
    std::ofstream(path) << R"({"q":"a","m":"b","i":0,"v":[1,2]})" << "\n\n" << R"({"q":"a","m":"b","i":1,"v":[1]})" << "\n";
    try {
        (void)load_embedding_store(path.string());
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
    std::ofstream(path) << "not json\n";
    try {
        (void)load_embedding_store(path.string());
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 1u);
    }
    EXPECT_THROW((void)load_embedding_store(temp_file("missing.jsonl").string()), NotFound);
}

TEST(RemoteEmbeddingClient, OpenAiShapeWithToken) {
    std::string seen_auth;
    nlohmann::json seen_body;
    TestServer server("/api/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
        seen_auth = req.get_header_value("Authorization");
        seen_body = nlohmann::json::parse(req.body);
        res.set_content(R"({"data":[{"embedding":[0.5,0.25,-1.0]}]})", "application/json");
    });
    RemoteEmbeddingOptions o;
    o.endpoint = server.url() + "/api";
    o.model = "gte-test";
    o.token = "secret-token";
    o.dimension = 3;
    RemoteEmbeddingClient client(o);
    EXPECT_EQ(client.embed("hello", {}), (EmbeddingVector{0.5, 0.25, -1.0}));
    EXPECT_EQ(seen_auth, "Bearer secret-token");
    EXPECT_EQ(seen_body["model"], "gte-test");
    EXPECT_EQ(seen_body["input"], nlohmann::json::array({"hello"}));
}

TEST(RemoteEmbeddingClient, BareArrayAndFailures) {
    int mode = 0;
    TestServer server("/v1/embeddings", [&](const httplib::Request&, httplib::Response& res) {
        if (mode == 0) res.set_content("[[1.0,2.0]]", "application/json");
        if (mode == 1) res.status = 503;
        if (mode == 2) res.set_content("{\"oops\":1}", "application/json");
        if (mode == 3) res.set_content("[[1.0,2.0,3.0]]", "application/json");
    });
    RemoteEmbeddingOptions o;
    o.endpoint = server.url();
    o.dimension = 2;
    o.timeout = std::chrono::milliseconds(2000);
    RemoteEmbeddingClient client(o);
    EXPECT_EQ(client.embed("x", {}), (EmbeddingVector{1.0, 2.0}));
    mode = 1;
    EXPECT_THROW(client.embed("x", {}), TransportError);
    mode = 2;
    EXPECT_THROW(client.embed("x", {}), TransportError);
    mode = 3;
    EXPECT_THROW(client.embed("x", {}), InvalidInput);

    RemoteEmbeddingOptions dead = o;
    dead.endpoint = "http://127.0.0.1:1";
    EXPECT_THROW(RemoteEmbeddingClient(dead).embed("x", {}), TransportError);
}

TEST(MakeProvider, FileAndDimensionCheck) {
    const auto path = temp_file("provider.jsonl");
    std::ofstream(path) << R"({"q":"q","m":"m","i":0,"v":[1,2,3]})" << "\n";
    ProviderConfig cfg;
    cfg.kind = ProviderConfig::Kind::file;
    cfg.path = path.string();
    EXPECT_EQ(make_provider(cfg)->dimension(), 3u);
    cfg.dimension = 4;
    EXPECT_THROW(make_provider(cfg), InvalidInput);
}
