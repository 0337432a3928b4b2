"""The sample two-layer envelope used throughout the tests."""

SAMPLE_ENVELOPE = """<SJDL><NOTBEFORE>1312392035</NOTBEFORE><NOTAFTER>1313601635</NOTAFTER><NESTEDJDL>
  <SJDL><NOTBEFORE>1312392035</NOTBEFORE><NOTAFTER>1313601635</NOTAFTER><NESTEDJDL>
    Executable = {"cat"};
    Arguments = {"myInputFile"};
    InputFile = {"/catalogue/data/myInputFile"};
    Output = {"stdout","stderr"};
    User = {"testuser"};
    Broker = {"myVO"};
    HashOrd = "Executable-Arguments-InputFile-Output-User-Broker";
  </NESTEDJDL><SIGNATURE>FTi2ATSgQ[...]CoA0TG==</SIGNATURE></SJDL>
  PilotIdentifier = {"FpK0bE9P[...]Jq1zNx"};
  HashOrd = "SJDL-PilotIdentifier";
</NESTEDJDL><SIGNATURE>EMQlV0Wzg[...]r47ivk=</SIGNATURE></SJDL>
"""

INNER_JDL = """    Executable = {"cat"};
    Arguments = {"myInputFile"};
    InputFile = {"/catalogue/data/myInputFile"};
    Output = {"stdout","stderr"};
    User = {"testuser"};
    Broker = {"myVO"};
    HashOrd = "Executable-Arguments-InputFile-Output-User-Broker";
"""

NOT_BEFORE = 1312392035
NOT_AFTER = 1313601635
PILOT_ID = "FpK0bE9P[...]Jq1zNx"
