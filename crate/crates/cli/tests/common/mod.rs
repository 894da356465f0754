use kwb_cli::{run, Command, Verb};
use serde_json::{json, Value};

pub fn triangle() -> Value {
    json!({"n":3,"k":2,"vertices":3,"edges":[[0,1,2]]})
}

pub fn two_triangles() -> Value {
    json!({"n":3,"k":2,"vertices":4,"edges":[[0,1,2],[0,1,3]]})
}

pub fn small_structure() -> Value {
    json!({"f":[1,2],"k":1,"P":[{"id":0,"leaf":"0"}],"Q":[{"id":1,"s":["","0"]}],"R":[[1,0]]})
}

/// A representative parameter object for each verb.
pub fn sample(verb: Verb) -> Value {
    match verb {
        Verb::TreeEnum => json!({"f":[1,2,4],"k":3}),
        Verb::SEnum => json!({"f":[1,2,4],"k":2,"list":true}),
        Verb::Blocking => json!({"f":[1,2],"k":2,"list":true}),
        Verb::TfCheck => json!({
            "f":[1],"k":1,
            "P":[{"id":0,"leaf":"0"},{"id":1,"leaf":"1"}],
            "Q":[{"id":2,"s":["","0"]}],
            "R":[[2,0],[2,1]]
        }),
        Verb::TfGen => json!({"f":[1,2,4],"k":2,"n_p":4,"n_q":3}),
        Verb::TfAmalgamate => json!({
            "left": small_structure(),
            "right": {"f":[1,2],"k":1,
                "P":[{"id":0,"leaf":"0"},{"id":5,"leaf":"1"}],
                "Q":[{"id":6,"s":["","1"]}],
                "R":[[6,5]]},
            "shared": [[0,0]]
        }),
        Verb::TfLift => small_structure(),
        Verb::TypeCheck => json!({
            "shape":"P","f":[1,2],"k":2,"oracle":true,
            "subtrees":[["","0","0.0","0.1"],["","0","0.1","0.2"]]
        }),
        Verb::BaEval => json!({
            "sizes":[2,3],
            "expr":{"join":[{"gen":{"0":1}},{"gen":{"1":2}}]},
            "leq":"one",
            "family":[{"0":1},{"0":0},{"1":2}],
            "m":2
        }),
        Verb::PatternBuild => json!({"kind":"dual","f":[1,2],"depth":2,"n":2}),
        Verb::PatternVerify => {
            let built = run(&Command {
                verb: Verb::RefineBuild,
                params: json!({"kind":"tf","f":[1],"depth":1,"n":2}),
                seed: None,
            })
            .expect("sample build runs");
            json!({"pattern": built.result["pattern"], "refinement": built.result["refinement"]})
        }
        Verb::RefineBuild => json!({"kind":"dual","f":[1,2],"depth":2,"n":2}),
        Verb::RefineSearch => {
            json!({"build":{"kind":"tf","f":[1],"depth":1,"n":3},"require_nonzero":true})
        }
        Verb::TnkCheck => json!({
            "n":3,"k":2,"vertices":5,
            "edges":[[0,1,2],[0,1,3],[0,2,3]],
            "type":[[0,1],[0,2],[1,2]]
        }),
        Verb::TnkPattern => json!({"graph": two_triangles()}),
        Verb::TnkTrace => json!({"graph": triangle(), "pool": "all"}),
        Verb::EscapeProbe => json!({"graph": two_triangles(), "trials": 50}),
    }
}
