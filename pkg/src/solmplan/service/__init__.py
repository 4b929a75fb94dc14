"""HTTP service exposing the toolkit; see :func:`solmplan.service.app.create_app`."""
