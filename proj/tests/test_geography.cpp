#include "ilicast/csv.hpp"
#include "ilicast/errors.hpp"
#include "ilicast/geography.hpp"
#include "ilicast/hash.hpp"

#include <gtest/gtest.h>

using namespace ilicast;

namespace {

const std::string kAdjacencyPath = std::string(ILICAST_DATA_DIR) + "/adjacency.csv";

using Set = std::vector<std::string>;

AdjacencyGraph default_graph() {
	return AdjacencyGraph::load(kAdjacencyPath);
}

} // namespace

TEST(Geography, StateCodes) {
	EXPECT_EQ(all_states().size(), 50u);
	EXPECT_TRUE(is_state_code("GA"));
	EXPECT_FALSE(is_state_code("DC"));
	EXPECT_FALSE(is_state_code("PR"));
	EXPECT_FALSE(is_state_code("US"));
}

TEST(Geography, NormalizeLocation) {
	EXPECT_EQ(normalize_location("Georgia"), "GA");
	EXPECT_EQ(normalize_location("new york"), "NY");
	EXPECT_EQ(normalize_location(" tx "), "TX");
	EXPECT_EQ(normalize_location("National"), "US");
	EXPECT_EQ(normalize_location("District of Columbia"), "");
	EXPECT_EQ(normalize_location("Puerto Rico"), "");
	EXPECT_EQ(normalize_location("New York City"), "");
}

TEST(Adjacency, FileIsPinned) {
	EXPECT_EQ(sha256_hex(csv::read_file(kAdjacencyPath)),
	          "dc48c391bf7a9252415d015b7650a93ca6e3dca54f20353a9ba37e3b39c3e048");
}

TEST(Adjacency, ExclaveRules) {
	const auto g = default_graph();
	EXPECT_EQ(g.neighbors("AK"), (Set{"WA"}));
	EXPECT_EQ(g.neighbors("HI"), (Set{"CA", "OR", "WA"}));
	// Directed as stated: the mainland states do not take AK/HI as covariates.
	for (const char *s : {"WA", "CA", "OR"}) {
		const auto n = g.neighbors(s);
		EXPECT_EQ(std::count(n.begin(), n.end(), "AK") + std::count(n.begin(), n.end(), "HI"), 0) << s;
	}
}

TEST(Adjacency, KnownLandBorders) {
	const auto g = default_graph();
	EXPECT_EQ(g.neighbors("MO"), (Set{"AR", "IA", "IL", "KS", "KY", "NE", "OK", "TN"}));
	EXPECT_EQ(g.neighbors("TN"), (Set{"AL", "AR", "GA", "KY", "MO", "MS", "NC", "VA"}));
	EXPECT_EQ(g.neighbors("KY"), (Set{"IL", "IN", "MO", "OH", "TN", "VA", "WV"}));
	EXPECT_EQ(g.neighbors("ME"), (Set{"NH"}));
	EXPECT_EQ(g.neighbors("WA"), (Set{"ID", "OR"}));
	EXPECT_EQ(g.neighbors("CA"), (Set{"AZ", "NV", "OR"}));
	EXPECT_EQ(g.neighbors("FL"), (Set{"AL", "GA"}));
	EXPECT_EQ(g.neighbors("NY"), (Set{"CT", "MA", "NJ", "PA", "VT"}));
	EXPECT_EQ(g.neighbors("RI"), (Set{"CT", "MA"}));
	// Four Corners point contacts are not borders.
	EXPECT_EQ(g.neighbors("AZ"), (Set{"CA", "NM", "NV", "UT"}));
	EXPECT_EQ(g.neighbors("CO"), (Set{"KS", "NE", "NM", "OK", "UT", "WY"}));
}

TEST(Adjacency, MainlandSymmetryAndCoverage) {
	const auto g = default_graph();
	for (const auto &a : all_states()) {
		const auto ns = g.neighbors(a);
		EXPECT_FALSE(ns.empty()) << a;
		EXPECT_TRUE(std::is_sorted(ns.begin(), ns.end()));
		for (const auto &b : ns) {
			EXPECT_NE(a, b);
			EXPECT_TRUE(is_state_code(b));
			if (a == "AK" || a == "HI") {
				continue;
			}
			const auto back = g.neighbors(b);
			EXPECT_TRUE(std::binary_search(back.begin(), back.end(), a)) << a << "-" << b;
		}
	}
	EXPECT_EQ(g.edge_count(), 214u);
}

TEST(Adjacency, Symmetrize) {
	const auto g = AdjacencyGraph::load(kAdjacencyPath, true);
	const auto wa = g.neighbors("WA");
	EXPECT_TRUE(std::binary_search(wa.begin(), wa.end(), "AK"));
	EXPECT_TRUE(std::binary_search(wa.begin(), wa.end(), "HI"));
	EXPECT_EQ(g.edge_count(), 218u);
}

TEST(Adjacency, Errors) {
	const std::vector<std::pair<std::string, std::string>> loop = {{"GA", "GA"}};
	EXPECT_THROW(AdjacencyGraph::from_edges(loop), IntegrityError);
	const std::vector<std::pair<std::string, std::string>> bad = {{"GA", "DC"}};
	EXPECT_THROW(AdjacencyGraph::from_edges(bad), DomainError);
	EXPECT_THROW(default_graph().neighbors("ZZ"), DomainError);
}

TEST(Adjacency, RestrictedSubgraph) {
	const std::vector<std::string> keep = {"MO", "KS", "IA", "CA"};
	const auto g = default_graph().restricted_to(keep);
	EXPECT_EQ(g.neighbors("MO"), (Set{"IA", "KS"}));
	EXPECT_TRUE(g.neighbors("CA").empty());
	EXPECT_TRUE(g.neighbors("TN").empty());
}
