"""Ten line-level corruptions each of the F2 manifest, answers and ratings files.

Each entry is (name, transform, expected 1-based line of the first problem or
None for file-level problems). Transforms take and return the file text.
"""

import json


def _edit_line(n, fn):
    def apply(text):
        lines = text.splitlines()
        lines[n - 1] = fn(lines[n - 1])
        return "\n".join(lines) + "\n"
    return apply


def _edit_json(n, fn):
    def patch(line):
        obj = json.loads(line)
        fn(obj)
        return json.dumps(obj)
    return _edit_line(n, patch)


def _set(key, value):
    def fn(obj):
        obj[key] = value
    return fn


def _drop(key):
    def fn(obj):
        del obj[key]
    return fn


def _append(line):
    return lambda text: text + line + "\n"


def _answers(fn):
    def patch(obj):
        fn(obj["answers"])
    return patch


MANIFEST = [
    ("truncated json", _edit_line(3, lambda s: s[:-5]), 3),
    ("not an object", _edit_line(2, lambda s: "[1, 2]"), 2),
    ("duplicate sample_id", _edit_json(4, _set("sample_id", "s01")), 4),
    ("unknown camera", _edit_json(5, _set("camera", "roof")), 5),
    ("missing image_ref", _edit_json(6, _drop("image_ref")), 6),
    ("empty sample_id", _edit_json(7, _set("sample_id", " ")), 7),
    ("question_ids not a list", _edit_json(8, _set("question_ids", "q08")), 8),
    ("duplicate question in sample", _edit_json(9, _set("question_ids", ["q09", "q09"])), 9),
    ("numeric sample_id", _edit_json(10, _set("sample_id", 10)), 10),
    ("trailing garbage", _append("{oops"), 13),
]

ANSWERS = [
    ("dangling question_id", _edit_json(2, _set("question_id", "q99")), 2),
    ("duplicate question_id", _edit_json(3, _set("question_id", "q01")), 3),
    ("broken json", _edit_line(4, lambda s: s.replace("{", "", 1)), 4),
    ("answers not a list", _edit_json(5, _set("answers", "yes")), 5),
    ("empty answers", _edit_json(6, _set("answers", [])), 6),
    ("annotator not an object", _edit_json(7, _answers(lambda a: a.__setitem__(0, "yes"))), 7),
    ("empty answer text", _edit_json(8, _answers(lambda a: a[0].__setitem__("answer", ""))), 8),
    ("duplicate rater", _edit_json(9, _answers(lambda a: a[1].__setitem__("rater_id", a[0]["rater_id"]))), 9),
    ("features not strings", _edit_json(10, _answers(lambda a: a[0].__setitem__("features", [1, 2]))), 10),
    ("missing question_id", _edit_json(11, _drop("question_id")), 11),
]

RATINGS = [
    ("wrong header", _edit_line(1, lambda s: "qid,variant,rater,rating"), 1),
    ("rating out of range", _edit_line(2, lambda s: s.rsplit(",", 1)[0] + ",6"), 2),
    ("rating zero", _edit_line(3, lambda s: s.rsplit(",", 1)[0] + ",0"), 3),
    ("fractional rating", _edit_line(4, lambda s: s.rsplit(",", 1)[0] + ",3.5"), 4),
    ("unknown variant", _edit_line(5, lambda s: ",".join([s.split(",")[0], "finetuned", *s.split(",")[2:]])), 5),
    ("too few fields", _edit_line(6, lambda s: s.rsplit(",", 1)[0]), 6),
    ("too many fields", _edit_line(7, lambda s: s + ",extra"), 7),
    ("dangling question_id", _edit_line(8, lambda s: "q99" + s[3:]), 8),
    ("empty rater", _edit_line(9, lambda s: ",".join(s.split(",")[:2] + ["", s.split(",")[3]])), 9),
    ("duplicate rating", lambda t: t + t.splitlines()[1] + "\n", 74),
]
