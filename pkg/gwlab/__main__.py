from gwlab.main import dispatch

raise SystemExit(dispatch())
