#include <gtest/gtest.h>

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "test_util.hpp"

extern char** environ;

namespace sake {
namespace {

using testing::TempDir;

std::filesystem::path data_dir() { return testing::source_dir() / "data" / "synthetic"; }

struct Result {
  int code = -1;
  std::string output;
};

// Runs the installed binary through the shell, capturing stdout and stderr.
Result sake_cli(const std::string& args) {
  const std::string cmd = std::string(SAKE_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

// Binds an ephemeral port and releases it again.
int free_port() {
  const int fd = socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  socklen_t len = sizeof addr;
  bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  close(fd);
  return ntohs(addr.sin_port);
}

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(sake_cli("--help").code, 0);
  const auto none = sake_cli("");
  EXPECT_EQ(none.code, 2);
  EXPECT_EQ(sake_cli("frobnicate").code, 2);
  EXPECT_EQ(sake_cli("rollout --input x").code, 2);
  EXPECT_EQ(sake_cli("eval --pred a --gold b --bogus").code, 2);
}

TEST(Cli, ConfigErrorsExitTwo) {
  TempDir dir;
  const auto gold = q(data_dir() / "gold.jsonl");
  EXPECT_EQ(sake_cli("eval --pred " + gold + " --gold " + gold + " --set no_such_key=1").code, 2);
  EXPECT_EQ(sake_cli("eval --pred " + gold + " --gold " + gold + " --task ner").code, 2);
  EXPECT_EQ(sake_cli("rollout --input " + gold + " --policy magic --tools local:" + (data_dir() / "index.jsonl").string() +
                     " --out " + q(dir / "o.jsonl"))
                .code,
            2);
  jsonl::write_file(dir / "c.json", R"({"group_size": 1})");
  EXPECT_EQ(sake_cli("eval --pred " + gold + " --gold " + gold + " --config " + q(dir / "c.json")).code, 2);
}

TEST(Cli, MalformedInputExitsFour) {
  TempDir dir;
  jsonl::write_file(dir / "bad.jsonl", "{\"id\": \"a\", \"text\": \"t\", \"entities\": [}\n");
  const auto r = sake_cli("eval --pred " + q(dir / "bad.jsonl") + " --gold " + q(dir / "bad.jsonl"));
  EXPECT_EQ(r.code, 4) << r.output;
  jsonl::write_file(dir / "box.jsonl",
                    R"({"id":"a","text":"t","entities":[{"span":"A","type":"PER","box":[5,5,1,1]}]})" "\n");
  EXPECT_EQ(sake_cli("eval --pred " + q(dir / "box.jsonl") + " --gold " + q(dir / "box.jsonl")).code, 4);
  EXPECT_EQ(sake_cli("eval --pred " + q(dir / "missing.jsonl") + " --gold " + q(dir / "box.jsonl")).code, 4);
}

TEST(Cli, UnreachablePolicyExitsThree) {
  TempDir dir;
  const auto r = sake_cli("rollout --input " + q(data_dir() / "gold.jsonl") + " --policy remote:http://127.0.0.1:" +
                          std::to_string(free_port()) + "/generate --tools local:" +
                          (data_dir() / "index.jsonl").string() + " --out " + q(dir / "o.jsonl") + " --group 2");
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("aborted"), std::string::npos);
}

TEST(Cli, RolloutSubprocessIsDeterministic) {
  TempDir dir;
  const auto d = data_dir();
  ASSERT_EQ(sake_cli("tag-gen --gold " + q(d / "gold.jsonl") + " --policy scripted:" + (d / "tag_policy.jsonl").string() +
                     " --out-dir " + q(dir.path()))
                .code,
            0);
  const auto base = "rollout --input " + q(dir / "rl_pool.jsonl") + " --policy scripted:" +
                    (d / "rollout_policy.jsonl").string() + " --tools local:" + (d / "index.jsonl").string() +
                    " --seed 5 --out ";
  ASSERT_EQ(sake_cli(base + q(dir / "a.jsonl")).code, 0);
  ASSERT_EQ(sake_cli(base + q(dir / "b.jsonl")).code, 0);
  EXPECT_EQ(testing::slurp(dir / "a.jsonl"), testing::slurp(dir / "b.jsonl"));
  const auto e = sake_cli("eval --pred " + q(dir / "a.jsonl") + " --gold " + q(d / "gold.jsonl") + " --task gmner");
  EXPECT_EQ(e.code, 0);
  EXPECT_NE(e.output.find("F1"), std::string::npos);
  EXPECT_NE(e.output.find("search_ratio"), std::string::npos);
}

TEST(Cli, ServeToolsAnswersAndStopsOnSignal) {
  const int port = free_port();
  const std::string bin = SAKE_CLI_PATH;
  const std::string index = (data_dir() / "index.jsonl").string();
  const std::string port_s = std::to_string(port);
  std::vector<std::string> args = {bin, "serve-tools", "--index", index, "--port", port_s};
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  pid_t pid = 0;
  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  posix_spawn_file_actions_addopen(&fa, 2, "/dev/null", O_WRONLY, 0);
  ASSERT_EQ(posix_spawn(&pid, bin.c_str(), &fa, nullptr, argv.data(), environ), 0);
  posix_spawn_file_actions_destroy(&fa);

  httplib::Client client("127.0.0.1", port);
  httplib::Result res;
  for (int i = 0; i < 100 && !(res = client.Get("/health")); ++i)
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  ASSERT_TRUE(res);
  auto search =
      client.Post("/text_search", R"({"queries":[{"entity":"x","q":"anything at all"}]})", "application/json");
  ASSERT_TRUE(search);
  EXPECT_EQ(search->status, 200);
  EXPECT_EQ(client.Post("/image_search", "[]", "application/json")->status, 400);

  kill(pid, SIGTERM);
  int status = 0;
  waitpid(pid, &status, 0);
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
}

}  // namespace
}  // namespace sake
