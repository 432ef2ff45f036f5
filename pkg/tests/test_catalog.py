import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dncrl.catalog import (MovieRecord, build_catalog, cosine_similarity, dedupe_rows, ingest,
                           parse_movies_csv, read_catalog, similarity_matrix, synthetic_catalog,
                           tfidf_vectorize, tier_rewards, tokenize)

from oracles import tfidf_reference

MOVIES = """movieId,title,genres
1,Toy Story (1995),Adventure|Animation|Children|Comedy|Fantasy
2,Jumanji (1995),Adventure|Children|Fantasy
3,"American President, The (1995)",Comedy|Drama|Romance
4,Heat (1995),Action|Crime|Thriller
5,Sabrina (1995),Comedy|Romance
6,Nothing Here (2001),(no genres listed)
7,Another Heat (1996),Action|Crime|Thriller
"""


@pytest.fixture
def movies(tmp_path):
    p = tmp_path / "movies.csv"
    p.write_text(MOVIES)
    return p


class TestParse:
    def test_rows(self, movies):
        recs = parse_movies_csv(movies)
        assert len(recs) == 7
        assert recs[0].genres == ["Adventure", "Animation", "Children", "Comedy", "Fantasy"]
        assert recs[2].title == "American President, The (1995)"
        assert recs[5].genres == ["(no genres listed)"]

    def test_header_only(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("movieId,title,genres\n")
        assert parse_movies_csv(p) == []

    def test_bad_row_reports_line(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("movieId,title,genres\n1,A,Drama\nx,B,Drama\n")
        with pytest.raises(ValueError, match=":3:"):
            parse_movies_csv(p)

    def test_bad_header_and_missing(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("id,name\n")
        with pytest.raises(ValueError):
            parse_movies_csv(p)
        with pytest.raises(OSError):
            parse_movies_csv(tmp_path / "absent.csv")

    def test_word_tokenizer(self):
        rec = MovieRecord(1, "x", ["Sci-Fi", "Film-Noir"])
        assert tokenize(rec, "words") == ["sci", "fi", "film", "noir"]
        assert tokenize(rec) == ["Sci-Fi", "Film-Noir"]
        with pytest.raises(ValueError):
            tokenize(rec, "chars")


class TestTfidf:
    def test_matches_reference(self, movies):
        recs = parse_movies_csv(movies)
        m, vocab = tfidf_vectorize(recs, decimals=None)
        ref, ref_vocab = tfidf_reference([r.genres for r in recs])
        assert vocab == ref_vocab
        np.testing.assert_allclose(m, ref, rtol=1e-12, atol=1e-15)

    def test_matches_sklearn(self, movies):
        sk = pytest.importorskip("sklearn.feature_extraction.text")
        recs = parse_movies_csv(movies)
        vec = sk.TfidfVectorizer(analyzer=lambda doc: doc, lowercase=False)
        expected = vec.fit_transform([r.genres for r in recs]).toarray()
        m, vocab = tfidf_vectorize(recs, decimals=None)
        assert vocab == list(vec.get_feature_names_out())
        np.testing.assert_allclose(m, expected, rtol=1e-12, atol=1e-15)

    def test_examples(self):
        one, _ = tfidf_vectorize([MovieRecord(1, "a", ["Drama"])])
        np.testing.assert_array_equal(one, [[1.0]])
        recs = [MovieRecord(i, "a", g) for i, g in
                enumerate([["Drama", "War"], ["Drama", "War"], ["Drama", "Comedy"]])]
        m, vocab = tfidf_vectorize(recs, decimals=None)
        np.testing.assert_array_equal(m[0], m[1])
        # Drama is in every record, so it carries the smallest weight
        assert m[0, vocab.index("Drama")] < m[0, vocab.index("War")]

    def test_errors(self):
        with pytest.raises(ValueError):
            tfidf_vectorize([])

    def test_rounded_rows_close_to_unit(self, movies):
        m, vocab = tfidf_vectorize(parse_movies_csv(movies))
        dev = np.abs(np.linalg.norm(m, axis=1) - 1.0)
        assert np.all(dev <= len(vocab) * 0.005)
        np.testing.assert_allclose(m * 100, np.round(m * 100), atol=1e-9)


class TestDedupeAndTiers:
    def test_dedupe(self):
        np.testing.assert_array_equal(dedupe_rows(np.ones((5, 3))), np.ones((1, 3)))
        m = np.array([[3.0, 1], [1, 2], [3, 1], [0, 0], [1, 2]])
        np.testing.assert_array_equal(dedupe_rows(m), [[3, 1], [1, 2], [0, 0]])
        u = np.eye(4)[::-1]
        np.testing.assert_array_equal(dedupe_rows(u), u)

    def test_tiers(self):
        np.testing.assert_array_equal(tier_rewards(10), [1] * 6 + [10] * 3 + [30])
        r = tier_rewards(7)
        assert list(r) == [1] * 5 + [10] * 2  # remainders land in the lowest tier

    def test_build(self, movies):
        cat = build_catalog(parse_movies_csv(movies))
        assert cat.features.shape == (6, len(cat.vocabulary))  # two Heat rows merge
        assert len(cat.item_rewards) == 6


class TestSimilarity:
    def test_examples(self):
        v = np.array([0.3, 0.4])
        assert math.isclose(cosine_similarity(v, v), 1.0)
        assert cosine_similarity([1, 0], [0, 1]) == 0.0
        assert math.isclose(cosine_similarity([1, 1], [1, 0]), 1 / math.sqrt(2), rel_tol=1e-15)
        with pytest.raises(ValueError):
            cosine_similarity([0, 0], [1, 0])

    def test_matrix(self):
        cat = synthetic_catalog(3, 120, 9)
        s = cat.similarity
        np.testing.assert_array_equal(s, s.T)
        np.testing.assert_array_equal(np.diag(s), 1.0)
        assert s.min() >= 0 and s.max() <= 1
        for i, j in [(0, 1), (5, 77), (len(s) - 1, 3)]:
            assert math.isclose(s[i, j], cosine_similarity(cat.features[i], cat.features[j]),
                                rel_tol=1e-12, abs_tol=1e-15)
        with pytest.raises(ValueError):
            similarity_matrix(np.zeros((2, 2)))


class TestSynthetic:
    def test_deterministic(self):
        a, b = synthetic_catalog(7, 300, 23), synthetic_catalog(7, 300, 23)
        np.testing.assert_array_equal(a.features, b.features)
        assert not np.array_equal(a.features, synthetic_catalog(8, 300, 23).features)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 1000), st.integers(1, 200), st.integers(1, 30))
    def test_shape_and_grid(self, seed, b, f):
        cat = synthetic_catalog(seed, b, f)
        m = cat.features
        assert 1 <= len(m) <= b and m.shape[1] == f
        assert m.min() >= 0 and m.max() <= 1
        np.testing.assert_allclose(m * 100, np.round(m * 100), atol=1e-9)
        assert len(np.unique(m, axis=0)) == len(m)
        assert np.all(np.linalg.norm(m, axis=1) > 0)

    def test_full_size_split(self):
        cat = synthetic_catalog(0, 1639, 23)
        r = cat.item_rewards
        shares = [np.mean(r == v) for v in (1, 10, 30)]
        np.testing.assert_allclose(shares, [0.6, 0.3, 0.1], atol=0.01)

    def test_errors(self):
        with pytest.raises(ValueError):
            synthetic_catalog(0, 0, 5)


class TestIngest:
    def test_round_trip_and_cache(self, movies, tmp_path):
        out = tmp_path / "cat" / "catalog.csv"
        cat = ingest(movies, out)
        back = read_catalog(out)
        np.testing.assert_array_equal(back.features, cat.features)
        np.testing.assert_array_equal(back.item_rewards, cat.item_rewards)
        assert back.vocabulary == cat.vocabulary
        caches = list(out.parent.glob("catalog.*.npy"))
        assert len(caches) == 1
        np.testing.assert_array_equal(read_catalog(caches[0]).features, cat.features)

    def test_byte_identical(self, movies, tmp_path):
        ingest(movies, tmp_path / "a.csv")
        ingest(movies, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_bad_catalog_file(self, tmp_path):
        p = tmp_path / "c.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_catalog(p)
